#include "s3pr/self_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "s3pr/deep_solver.hpp"
#include "s3pr/metrics.hpp"

namespace s3pr {

namespace {

std::string fmt(const char* label, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s=%.3e", label, v);
  return buf;
}

ComplexImage random_complex_image(RngStream& s, std::size_t side) {
  return ComplexImage(side, side, randn_complex(s, side * side));
}

Complex inner(std::span<const Complex> a, std::span<const Complex> b) {
  Complex acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
  return acc;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

std::vector<CheckResult> run_self_checks(std::uint64_t seed) {
  std::vector<CheckResult> results;
  RngStream stream(seed);
  constexpr std::size_t side = 16;
  const std::size_t n = side * side;

  for (OperatorMode mode : {OperatorMode::gaussian, OperatorMode::cdp, OperatorMode::fourier}) {
    const auto a = make_operator(mode, n, stream.next_u64());
    const auto x = random_complex_image(stream, side);
    const auto v = randn_complex(stream, a.m());
    const auto ax = a.apply(x);
    const auto ahv = a.adjoint_apply(v);
    const double err = std::abs(inner(ax, v) - inner(x.values(), ahv.values()));
    results.push_back({"adjoint identity (" + to_string(mode) + ")", err < 1e-10, fmt("abs_err", err)});
  }
  {
    const auto a = make_cdp(n, stream.next_u64());
    const auto x = random_complex_image(stream, side);
    const auto back = a.adjoint_apply(a.apply(x));
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(back[i] - 4.0 * x[i]));
    results.push_back({"CDP A^H A = 4 I", err < 1e-10, fmt("max_err", err)});
  }
  {
    const auto a = make_fourier(n);
    const auto x = randn(stream, side, side);
    const auto inten = a.intensity(x);
    double total = 0.0;
    for (double v : inten) total += v;
    const double err = std::abs(total - squared_norm(x.values())) / squared_norm(x.values());
    results.push_back({"Fourier Parseval", err < 1e-12, fmt("rel_err", err)});
  }

  const GeneratorArchitecture toy{kLatentDim, 4, 8, 8, 4};
  const GeneratorNetwork g = random_generator(toy, stream);
  {
    const auto z = randn(stream, kLatentDim);
    const auto cot = randn(stream, toy.output_side(), toy.output_side());
    const auto grad = vjp(g, z, cot);
    std::vector<double> fd(grad.size());
    const double h = 1e-5;
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      fd[i] = (dot(cot.values(), forward(g, zp).values()) - dot(cot.values(), forward(g, zm).values())) / (2 * h);
    }
    const double err = relative_error(grad, fd);
    results.push_back({"generator vjp vs central differences", err < 1e-5, fmt("rel_err", err)});
  }
  for (OperatorMode mode : {OperatorMode::gaussian, OperatorMode::fourier}) {
    const auto a = make_operator(mode, toy.output_side() * toy.output_side(), stream.next_u64());
    Latents truth{randn(stream, kLatentDim), randn(stream, kLatentDim)};
    SourceSet planted;
    for (const auto& z : truth) planted.sources.push_back(forward(g, z));
    const auto y = observe(a, planted, {}).y;
    Latents z{randn(stream, kLatentDim), randn(stream, kLatentDim)};
    const auto grad = loss_gradient(a, y, g, z, 1);
    std::vector<double> fd(grad.size());
    const double h = 1e-5;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      auto zp = z, zm = z;
      zp[1][i] += h;
      zm[1][i] -= h;
      fd[i] = (loss(a, y, g, zp) - loss(a, y, g, zm)) / (2 * h);
    }
    const double err = relative_error(grad, fd);
    results.push_back({"loss gradient vs central differences (" + to_string(mode) + ")", err < 1e-4, fmt("rel_err", err)});
    if (mode == OperatorMode::fourier) {
      const double ratio = autocorrelation_loss(a, y, g, z) / loss(a, y, g, z);
      const double expected = static_cast<double>(a.m());
      const double spread = std::abs(ratio - expected) / expected;
      results.push_back({"autocorrelation loss ratio", spread < 1e-8, fmt("rel_dev", spread)});
    }
  }
  {
    std::vector<RealImage> truths{randn(stream, side, side), randn(stream, side, side)};
    std::vector<RealImage> est{apply_flip(truths[1], Flip::up_down), truths[0]};
    for (auto& v : est[0].values()) v = -v;
    const double fourier = resolved_nmse(est, truths, OperatorMode::fourier).value;
    const double gaussian = resolved_nmse(est, truths, OperatorMode::gaussian).value;
    results.push_back({"metric ambiguity invariance", fourier < 1e-15 && gaussian > 0,
                       fmt("fourier", fourier) + " " + fmt("gaussian", gaussian)});
  }
  return results;
}

}  // namespace s3pr
