#include "s3pr/deep_solver.hpp"

#include <cmath>
#include <future>
#include <limits>

#include "s3pr/metrics.hpp"

namespace s3pr {

void SolverOptions::validate() const {
  if (iterations < 1) throw Error("solver: iterations must be at least 1");
  if (restarts < 1) throw Error("solver: restarts must be at least 1");
  if (!(learning_rate > 0)) throw Error("solver: learning_rate must be positive");
  if (initial_latents.size() > restarts) throw Error("solver: more initial latent sets than restarts");
}

namespace {

std::vector<RealImage> images_of(const GeneratorNetwork& g, const Latents& z) {
  std::vector<RealImage> out;
  for (const auto& zl : z) out.push_back(forward(g, zl));
  return out;
}

void require_fourier(const MeasurementOperator& a, std::span<const double> y) {
  if (a.mode() != OperatorMode::fourier) throw Error("autocorrelation_loss: requires a Fourier observation");
  if (y.size() != a.m()) throw Error("autocorrelation_loss: measurement length does not match operator");
}

ComplexImage padded_grid(const MeasurementOperator& a, std::span<const double> values) {
  const std::size_t side = 2 * a.side();
  ComplexImage out(side, side);
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i];
  return out;
}

// Autocorrelation-domain target (2s) F^-1 y; complex when y lacks Hermitian symmetry.
ComplexImage autocorrelation_target(const MeasurementOperator& a, std::span<const double> y) {
  ComplexImage t = ifft2_unitary(padded_grid(a, y));
  const double scale = static_cast<double>(2 * a.side());
  for (auto& v : t.values()) v *= scale;
  return t;
}

// Gradient of sum_k c[k] (x * x)[k] over x for a real weight grid c:
// sum_k c[k] x[i + k] + sum_k c[k] x[i - k], cropped to the unpadded support.
RealImage autocorrelation_pullback(const RealImage& c, const RealImage& x) {
  const ComplexImage cf = fft2_unitary(to_complex(c));
  const ComplexImage xf = fft2_unitary(zero_pad(x, c.rows(), c.cols()));
  ComplexImage conv_f(c.rows(), c.cols()), corr_f(c.rows(), c.cols());
  for (std::size_t i = 0; i < cf.size(); ++i) {
    conv_f[i] = cf[i] * xf[i];
    corr_f[i] = std::conj(cf[i]) * xf[i];
  }
  const ComplexImage conv = ifft2_unitary(conv_f);
  const ComplexImage corr = ifft2_unitary(corr_f);
  const double scale = std::sqrt(static_cast<double>(c.size()));
  RealImage out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t col = 0; col < x.cols(); ++col) out(r, col) = scale * (conv(r, col).real() + corr(r, col).real());
  return out;
}

double vector_norm(const std::vector<double>& v) { return std::sqrt(squared_norm(v)); }

}  // namespace

RealImage autocorrelation(const RealImage& img) {
  const ComplexImage f = fft2_unitary(zero_pad(img, 2 * img.rows(), 2 * img.cols()));
  ComplexImage power(f.rows(), f.cols());
  for (std::size_t i = 0; i < f.size(); ++i) power[i] = std::norm(f[i]);
  const ComplexImage back = ifft2_unitary(power);
  const double scale = std::sqrt(static_cast<double>(f.size()));
  RealImage out(f.rows(), f.cols());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = scale * back[i].real();
  return out;
}

double loss(const MeasurementOperator& a, std::span<const double> y, const GeneratorNetwork& g, const Latents& z) {
  if (z.empty()) throw Error("loss: need at least one latent");
  return measurement_residual(a, y, images_of(g, z));
}

std::vector<double> loss_gradient(const MeasurementOperator& a, std::span<const double> y, const GeneratorNetwork& g,
                                  const Latents& z, std::size_t l) {
  if (l >= z.size()) throw Error("loss_gradient: latent index out of range");
  const auto images = images_of(g, z);
  return vjp(g, z[l], residual_gradient(a, y, images, l));
}

double autocorrelation_loss(const MeasurementOperator& a, std::span<const double> y, const GeneratorNetwork& g,
                            const Latents& z) {
  require_fourier(a, y);
  ComplexImage r = autocorrelation_target(a, y);
  for (const auto& img : images_of(g, z)) {
    const RealImage ac = autocorrelation(img);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= ac[i];
  }
  return squared_norm(r.values());
}

std::vector<double> autocorrelation_loss_gradient(const MeasurementOperator& a, std::span<const double> y,
                                                  const GeneratorNetwork& g, const Latents& z, std::size_t l) {
  require_fourier(a, y);
  if (l >= z.size()) throw Error("autocorrelation_loss_gradient: latent index out of range");
  const auto images = images_of(g, z);
  ComplexImage r = autocorrelation_target(a, y);
  for (const auto& img : images) {
    const RealImage ac = autocorrelation(img);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= ac[i];
  }
  RealImage c(r.rows(), r.cols());
  for (std::size_t i = 0; i < r.size(); ++i) c[i] = -2.0 * r[i].real();
  return vjp(g, z[l], autocorrelation_pullback(c, images[l]));
}

namespace {

struct RestartOutcome {
  RestartTrace trace;
  Latents latents;
  std::vector<RealImage> estimates;
};

// Per-source cache refreshed whenever its latent moves.
struct SourceState {
  GeneratorTape tape;
  std::vector<Complex> ax;
  std::vector<double> intensity;
  RealImage autocorr;
};

RestartOutcome run_restart(const MeasurementOperator& a, std::span<const double> y, const GeneratorNetwork& g,
                           std::size_t sources, const SolverOptions& opts, bool precondition, Latents z) {
  const AdamOptions adam = opts.adam();
  const std::size_t m = a.m();
  std::optional<ComplexImage> target;
  if (precondition) target = autocorrelation_target(a, y);

  auto refresh = [&](SourceState& s, const std::vector<double>& zl) {
    s.tape = forward_with_tape(g, zl);
    s.ax = a.apply(s.tape.output);
    s.intensity.resize(m);
    for (std::size_t i = 0; i < m; ++i) s.intensity[i] = std::norm(s.ax[i]);
    if (precondition) {
      ComplexImage power = padded_grid(a, s.intensity);
      const ComplexImage back = ifft2_unitary(power);
      const double scale = static_cast<double>(2 * a.side());
      s.autocorr = RealImage(back.rows(), back.cols());
      for (std::size_t i = 0; i < back.size(); ++i) s.autocorr[i] = scale * back[i].real();
    }
  };

  RestartOutcome out;
  std::vector<SourceState> state(sources);
  std::vector<AdamState> optimizers(sources, AdamState(g.arch.latent_dim));
  for (std::size_t l = 0; l < sources; ++l) refresh(state[l], z[l]);

  // A step can push a latent to values where the network or the FFT sees
  // non-finite numbers; both throw, and the restart is abandoned.
  auto mark_diverged = [&](std::size_t it, std::size_t l, const std::string& what) {
    out.trace.diverged = true;
    out.trace.diagnostic = what + " at iteration " + std::to_string(it) + ", latent " + std::to_string(l);
  };

  std::vector<double> residual(m);
  auto compute_residual = [&] {
    for (std::size_t i = 0; i < m; ++i) {
      double v = y[i];
      for (const auto& s : state) v -= s.intensity[i];
      residual[i] = v;
    }
    return squared_norm(residual);
  };

  for (std::size_t it = 0; it < opts.iterations; ++it) {
    std::vector<double> norms(sources, 0.0);
    for (std::size_t l = 0; l < sources; ++l) {
      const double current = compute_residual();
      if (!std::isfinite(current)) {
        mark_diverged(it, l, "non-finite loss");
        break;
      }
      if (l == 0) out.trace.loss.push_back(current);

      RealImage image_grad;
      if (precondition) {
        RealImage c(target->rows(), target->cols());
        for (std::size_t i = 0; i < c.size(); ++i) {
          double v = (*target)[i].real();
          for (const auto& s : state) v -= s.autocorr[i];
          c[i] = -2.0 * v;
        }
        image_grad = autocorrelation_pullback(c, state[l].tape.output);
      } else {
        image_grad = residual_gradient(a, residual, state[l].ax);
      }
      const auto grad = vjp(g, state[l].tape, image_grad);
      norms[l] = vector_norm(grad);
      if (!all_finite(grad)) {
        mark_diverged(it, l, "non-finite gradient");
        break;
      }
      optimizers[l].step(z[l], grad, adam);
      try {
        refresh(state[l], z[l]);
      } catch (const Error& e) {
        mark_diverged(it, l, e.what());
        break;
      }
    }
    if (out.trace.diverged) break;
    out.trace.grad_norms.push_back(std::move(norms));
  }

  out.latents = std::move(z);
  for (const auto& s : state) out.estimates.push_back(s.tape.output);
  if (out.trace.diverged) {
    out.trace.residual = std::numeric_limits<double>::infinity();
    return out;
  }
  out.trace.residual = out.trace.diverged ? std::numeric_limits<double>::infinity()
                                          : measurement_residual(a, y, out.estimates);
  if (!std::isfinite(out.trace.residual) && !out.trace.diverged) {
    out.trace.diverged = true;
    out.trace.diagnostic = "non-finite final residual";
  }
  return out;
}

}  // namespace

ReconstructionResult solve(const MeasurementOperator& a, std::span<const double> y, const GeneratorNetwork& g,
                           std::size_t sources, const SolverOptions& opts, std::uint64_t seed) {
  opts.validate();
  if (sources < 1) throw Error("solve: need at least one source");
  if (y.size() != a.m()) throw Error("solve: measurement length does not match operator");
  if (g.arch.output_side() != a.side()) throw Error("solve: generator output size does not match operator");
  const bool precondition = opts.precondition == Precondition::on ||
                            (opts.precondition == Precondition::automatic && a.mode() == OperatorMode::fourier);
  if (precondition && a.mode() != OperatorMode::fourier)
    throw Error("solve: autocorrelation preconditioning requires a Fourier operator");

  std::vector<Latents> starts;
  for (std::size_t k = 0; k < opts.restarts; ++k) {
    if (k < opts.initial_latents.size()) {
      const auto& init = opts.initial_latents[k];
      if (init.size() != sources) throw Error("solve: initial latent set has wrong source count");
      for (const auto& zl : init)
        if (zl.size() != g.arch.latent_dim) throw Error("solve: initial latent has wrong length");
      for (const auto& zl : init)
        if (!all_finite(zl)) throw Error("solve: initial latent is not finite");
      starts.push_back(init);
      continue;
    }
    RngStream stream(derive_seed(seed, k));
    Latents z;
    for (std::size_t l = 0; l < sources; ++l) z.push_back(randn(stream, g.arch.latent_dim));
    starts.push_back(std::move(z));
  }

  std::vector<RestartOutcome> outcomes;
  if (opts.parallel_restarts) {
    std::vector<std::future<RestartOutcome>> futures;
    for (auto& z : starts)
      futures.push_back(std::async(std::launch::async, run_restart, std::cref(a), y, std::cref(g), sources,
                                   std::cref(opts), precondition, std::move(z)));
    for (auto& f : futures) outcomes.push_back(f.get());
  } else {
    for (auto& z : starts) outcomes.push_back(run_restart(a, y, g, sources, opts, precondition, std::move(z)));
  }

  ReconstructionResult result;
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    if (!outcomes[k].trace.diverged && outcomes[k].trace.residual < best) {
      best = outcomes[k].trace.residual;
      result.selected_restart = k;
      found = true;
    }
  }
  if (!found) throw Error("solve: every restart diverged");
  result.estimates = outcomes[result.selected_restart].estimates;
  result.latents = outcomes[result.selected_restart].latents;
  result.final_residual = best;
  for (auto& o : outcomes) result.restarts.push_back(std::move(o.trace));
  return result;
}

void write_loss_trace_csv(const ReconstructionResult& result, std::ostream& out) {
  const std::size_t sources = result.latents.size();
  out << "iteration,restart,loss";
  for (std::size_t l = 0; l < sources; ++l) out << ",grad_norm_" << (l + 1);
  out << '\n';
  char buf[64];
  for (std::size_t k = 0; k < result.restarts.size(); ++k) {
    const auto& trace = result.restarts[k];
    for (std::size_t it = 0; it < trace.loss.size(); ++it) {
      std::snprintf(buf, sizeof(buf), "%.17g", trace.loss[it]);
      out << it << ',' << k << ',' << buf;
      for (std::size_t l = 0; l < sources; ++l) {
        const double v = it < trace.grad_norms.size() ? trace.grad_norms[it][l] : std::nan("");
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace s3pr
