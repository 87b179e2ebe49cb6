#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "s3pr/measurement.hpp"

using namespace s3pr;

namespace {

Complex inner(std::span<const Complex> a, std::span<const Complex> b) {
  Complex acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
  return acc;
}

// Dense m x n matrix of an operator, built column by column from basis images.
std::vector<std::vector<Complex>> densify(const MeasurementOperator& a) {
  std::vector<std::vector<Complex>> cols;
  for (std::size_t j = 0; j < a.n(); ++j) {
    ComplexImage e(a.side(), a.side());
    e[j] = 1.0;
    cols.push_back(a.apply(e));
  }
  return cols;
}

// Textbook CDP: for each mask, DFT of (mask .* x) with unitary scaling.
std::vector<Complex> naive_cdp(const MeasurementOperator& a, const ComplexImage& x) {
  const std::size_t s = a.side();
  std::vector<Complex> out;
  for (const auto& mask : a.masks())
    for (std::size_t u = 0; u < s; ++u)
      for (std::size_t v = 0; v < s; ++v) {
        Complex acc = 0.0;
        for (std::size_t r = 0; r < s; ++r)
          for (std::size_t c = 0; c < s; ++c)
            acc += mask(r, c) * x(r, c) * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(u * r + v * c) / s);
        out.push_back(acc / static_cast<double>(s));
      }
  return out;
}

SourceSet random_sources(RngStream& s, std::size_t count, std::size_t side) {
  SourceSet set;
  for (std::size_t l = 0; l < count; ++l) set.sources.push_back(randn(s, side, side));
  return set;
}

}  // namespace

TEST_CASE("operator modes parse and print") {
  for (auto mode : {OperatorMode::gaussian, OperatorMode::cdp, OperatorMode::fourier})
    CHECK(parse_operator_mode(to_string(mode)) == mode);
  CHECK_THROWS_AS(parse_operator_mode("radon"), Error);
}

TEST_CASE("shape checks") {
  CHECK_THROWS_AS(make_gaussian(64, 200, 1), Error);
  CHECK_THROWS_AS(make_gaussian(63, 252, 1), Error);
  CHECK_THROWS_AS(make_cdp(0, 1), Error);
  const auto a = make_fourier(64);
  CHECK(a.m() == 256);
  CHECK_THROWS_AS(a.apply(RealImage(4, 4)), Error);
  CHECK_THROWS_AS(a.adjoint_apply(std::vector<Complex>(10)), Error);
}

TEST_CASE("CDP matches a per-mask DFT and densifies to A^H A = 4 I") {
  const auto a = make_cdp(64, 31);
  REQUIRE(a.m() == 256);
  REQUIRE(a.masks().size() == 4);
  for (const auto& mask : a.masks())
    for (const auto& v : mask.values()) CHECK(std::abs(v) == doctest::Approx(1.0).epsilon(1e-14));

  RngStream s(1);
  const ComplexImage x(8, 8, randn_complex(s, 64));
  const auto fast = a.apply(x), slow = naive_cdp(a, x);
  for (std::size_t i = 0; i < fast.size(); ++i) CHECK(std::abs(fast[i] - slow[i]) < 1e-12);

  const auto cols = densify(a);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 64; ++j) {
      const Complex g = inner(cols[i], cols[j]);
      CHECK(std::abs(g - Complex(i == j ? 4.0 : 0.0, 0.0)) < 1e-12);
    }
}

TEST_CASE("Gaussian operator has E||Ax||^2 = ||x||^2") {
  RngStream s(2);
  const auto x = randn(s, 8, 8);
  const double nx = squared_norm(x.values());
  double mean = 0.0;
  const int draws = 200;
  for (int d = 0; d < draws; ++d) {
    const auto a = make_gaussian(64, 256, s.next_u64());
    mean += squared_norm(a.apply(x)) / nx;
  }
  mean /= draws;
  // Each draw is a chi-square with 2m degrees of freedom scaled by 1/(2m); std ~ 1/sqrt(256).
  CHECK(std::abs(mean - 1.0) < 0.02);
}

TEST_CASE("Gaussian entries have variance 1/m split evenly") {
  const auto a = make_gaussian(256, 1024, 77);
  const double m = 1024.0;
  const double re2 = a.dense_real().squaredNorm() / a.dense_real().size();
  const double im2 = a.dense_imag().squaredNorm() / a.dense_imag().size();
  CHECK(re2 * m == doctest::Approx(0.5).epsilon(0.02));
  CHECK(im2 * m == doctest::Approx(0.5).epsilon(0.02));
  CHECK(std::abs(a.dense_real().mean()) * std::sqrt(m) < 0.01);
}

TEST_CASE("Gaussian operator is deterministic per seed") {
  CHECK(make_gaussian(64, 256, 5).dense_real() == make_gaussian(64, 256, 5).dense_real());
  CHECK(make_gaussian(64, 256, 5).dense_imag() != make_gaussian(64, 256, 6).dense_imag());
}

TEST_CASE("Fourier operator of a delta is flat at 1/(2 side)^2 intensity") {
  const auto a = make_fourier(64);
  RealImage delta(8, 8);
  delta(0, 0) = 1.0;
  for (double v : a.intensity(delta)) CHECK(v == doctest::Approx(1.0 / (16.0 * 16.0)).epsilon(1e-14));
}

TEST_CASE("adjoint identity <Ax, v> = <x, A^H v> in every mode") {
  RngStream s(3);
  for (auto mode : {OperatorMode::gaussian, OperatorMode::cdp, OperatorMode::fourier}) {
    const auto a = make_operator(mode, 144, s.next_u64());
    for (int t = 0; t < 5; ++t) {
      const ComplexImage x(12, 12, randn_complex(s, 144));
      const auto v = randn_complex(s, a.m());
      const Complex lhs = inner(a.apply(x), v), rhs = inner(x.values(), a.adjoint_apply(v).values());
      CHECK(std::abs(lhs - rhs) < 1e-10 * std::abs(lhs));
      const auto re = a.adjoint_real(v);
      const auto full = a.adjoint_apply(v);
      for (std::size_t i = 0; i < re.size(); ++i) CHECK(re[i] == doctest::Approx(full[i].real()).epsilon(1e-12));
    }
  }
}

TEST_CASE("real and complex apply agree") {
  RngStream s(4);
  for (auto mode : {OperatorMode::gaussian, OperatorMode::cdp, OperatorMode::fourier}) {
    const auto a = make_operator(mode, 64, s.next_u64());
    const auto x = randn(s, 8, 8);
    const auto r = a.apply(x), c = a.apply(to_complex(x));
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(r[i] - c[i]) < 1e-13);
    const auto inten = a.intensity(x);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(inten[i] == doctest::Approx(std::norm(r[i])).epsilon(1e-13));
  }
}

TEST_CASE("observe without noise sums intensities") {
  RngStream s(5);
  const auto a = make_cdp(64, 9);
  const auto set = random_sources(s, 3, 8);
  const auto obs = observe(a, set, {});
  CHECK(obs.y == obs.clean);
  std::vector<double> expected(a.m(), 0.0);
  for (const auto& x : set.sources) {
    const auto i = a.intensity(x);
    for (std::size_t k = 0; k < expected.size(); ++k) expected[k] += i[k];
  }
  for (std::size_t k = 0; k < expected.size(); ++k) CHECK(obs.y[k] == doctest::Approx(expected[k]).epsilon(1e-13));
  CHECK(obs.truth.has_value());
}

TEST_CASE("noise power matches the requested snr") {
  RngStream s(6);
  const auto a = make_fourier(64);
  const auto set = random_sources(s, 2, 8);
  const double snr = 10.0;
  double ratio = 0.0;
  const int draws = 100;
  for (int d = 0; d < draws; ++d) {
    const auto obs = observe(a, set, {snr, s.next_u64()});
    double signal = 0.0, noise = 0.0;
    for (std::size_t k = 0; k < obs.y.size(); ++k) {
      signal += obs.clean[k] * obs.clean[k];
      noise += (obs.y[k] - obs.clean[k]) * (obs.y[k] - obs.clean[k]);
    }
    ratio += noise / signal;
  }
  ratio /= draws;
  CHECK(ratio == doctest::Approx(1.0 / snr).epsilon(0.03));
}

TEST_CASE("noise is reproducible and snr is validated") {
  RngStream s(7);
  const auto a = make_fourier(64);
  const auto set = random_sources(s, 1, 8);
  CHECK(observe(a, set, {5.0, 42}).y == observe(a, set, {5.0, 42}).y);
  CHECK(observe(a, set, {5.0, 42}).y != observe(a, set, {5.0, 43}).y);
  CHECK_THROWS_AS(observe(a, set, {0.0, 1}), Error);
  CHECK_THROWS_AS(observe(a, set, {-1.0, 1}), Error);
  CHECK_THROWS_AS(observe(a, set, {std::nan(""), 1}), Error);
  CHECK_THROWS_AS(observe(a, SourceSet{}, {}), Error);
}

TEST_CASE("residual_gradient matches central differences") {
  RngStream s(8);
  for (auto mode : {OperatorMode::gaussian, OperatorMode::cdp, OperatorMode::fourier}) {
    const auto a = make_operator(mode, 36, s.next_u64());
    const auto y = observe(a, random_sources(s, 2, 6), {}).y;
    std::vector<RealImage> est{randn(s, 6, 6), randn(s, 6, 6)};
    const auto objective = [&](const std::vector<RealImage>& e) { return squared_norm(measurement_residual_vector(a, y, e)); };
    const auto grad = residual_gradient(a, y, est, 1);
    const double h = 1e-6;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      auto p = est, m = est;
      p[1][i] += h;
      m[1][i] -= h;
      const double fd = (objective(p) - objective(m)) / (2 * h);
      num += (grad[i] - fd) * (grad[i] - fd);
      den += fd * fd;
    }
    CHECK(std::sqrt(num / den) < 1e-6);
  }
}

TEST_CASE("residual at the truth is zero") {
  RngStream s(9);
  const auto a = make_gaussian(64, 256, 3);
  const auto set = random_sources(s, 2, 8);
  const auto y = observe(a, set, {}).y;
  const auto r = measurement_residual_vector(a, y, set.sources);
  CHECK(squared_norm(r) < 1e-24);
  const auto grad = residual_gradient(a, y, set.sources, 0);
  for (double v : grad.values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("operator files round-trip") {
  for (auto mode : {OperatorMode::gaussian, OperatorMode::cdp, OperatorMode::fourier}) {
    for (bool dense : {false, true}) {
      if (dense && mode != OperatorMode::gaussian) continue;
      const auto a = make_operator(mode, 64, 1234);
      std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
      save_operator(a, buf, dense);
      const auto b = load_operator(buf);
      CHECK(b.mode() == a.mode());
      CHECK(b.seed() == a.seed());
      CHECK(b.side() == a.side());
      RngStream s(10);
      const auto x = randn(s, 8, 8);
      CHECK(a.apply(x) == b.apply(x));
    }
  }
  std::istringstream bad(std::string("NOTANOP\0", 8) + std::string(20, '\0'), std::ios::binary);
  CHECK_THROWS_WITH_AS(load_operator(bad), "load_operator: bad magic", Error);
}
