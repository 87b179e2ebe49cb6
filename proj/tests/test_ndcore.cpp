#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "s3pr/ndcore.hpp"

using namespace s3pr;

namespace {

// O(N^4) DFT with unitary scaling; sign -1 forward, +1 inverse.
ComplexImage brute_force_dft(const ComplexImage& img, int sign) {
  const std::size_t rows = img.rows(), cols = img.cols();
  ComplexImage out(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows * cols));
  for (std::size_t u = 0; u < rows; ++u) {
    for (std::size_t v = 0; v < cols; ++v) {
      Complex acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const double phase = sign * 2.0 * std::numbers::pi *
                               (static_cast<double>(u * r) / rows + static_cast<double>(v * c) / cols);
          acc += img(r, c) * std::polar(1.0, phase);
        }
      out(u, v) = scale * acc;
    }
  }
  return out;
}

double max_abs_diff(const ComplexImage& a, const ComplexImage& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ComplexImage random_image(RngStream& s, std::size_t rows, std::size_t cols) {
  return ComplexImage(rows, cols, randn_complex(s, rows * cols));
}

}  // namespace

TEST_CASE("fft2_unitary of an impulse is constant 1/N") {
  const std::size_t n = 8;
  ComplexImage delta(n, n);
  delta(0, 0) = 1.0;
  const auto f = fft2_unitary(delta);
  for (const auto& v : f.values()) CHECK(std::abs(v - Complex(1.0 / n, 0.0)) < 1e-15);

  const auto back = ifft2_unitary(f);
  CHECK(max_abs_diff(back, delta) < 1e-15);
}

TEST_CASE("fft2_unitary matches a brute-force DFT") {
  RngStream s(11);
  for (auto [rows, cols] : {std::pair{8, 8}, std::pair{4, 6}}) {
    const auto img = random_image(s, rows, cols);
    CHECK(max_abs_diff(fft2_unitary(img), brute_force_dft(img, -1)) < 1e-10);
    CHECK(max_abs_diff(ifft2_unitary(img), brute_force_dft(img, +1)) < 1e-10);
  }
}

TEST_CASE("fft2 properties: round trip, Parseval, linearity") {
  RngStream s(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_image(s, 16, 16);
    const auto y = random_image(s, 16, 16);
    const Complex alpha(s.normal(), s.normal()), beta(s.normal(), s.normal());

    CHECK(max_abs_diff(ifft2_unitary(fft2_unitary(x)), x) < 1e-12);

    const double nx = squared_norm(x.values());
    CHECK(std::abs(squared_norm(fft2_unitary(x).values()) - nx) / nx < 1e-12);

    ComplexImage combo(16, 16);
    for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = alpha * x[i] + beta * y[i];
    const auto fx = fft2_unitary(x), fy = fft2_unitary(y), fc = fft2_unitary(combo);
    ComplexImage expected(16, 16);
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] = alpha * fx[i] + beta * fy[i];
    CHECK(max_abs_diff(fc, expected) / std::sqrt(squared_norm(expected.values())) < 1e-12);
  }
}

TEST_CASE("fft2 rejects non-finite input") {
  ComplexImage img(4, 4);
  img(1, 2) = Complex(std::nan(""), 0.0);
  CHECK_THROWS_AS(fft2_unitary(img), Error);
  img(1, 2) = Complex(0.0, INFINITY);
  CHECK_THROWS_AS(ifft2_unitary(img), Error);
}

TEST_CASE("Grid rejects empty shapes") {
  CHECK_THROWS_AS(RealImage(0, 3), Error);
  CHECK_THROWS_AS(RealImage(2, 2, std::vector<double>(3)), Error);
}

TEST_CASE("RngStream is deterministic per seed") {
  RngStream a(42), b(42), c(43);
  const auto va = randn(a, 4), vb = randn(b, 4), vc = randn(c, 4);
  CHECK(std::memcmp(va.data(), vb.data(), sizeof(double) * 4) == 0);
  CHECK(va != vc);

  RngStream d(7), e(7);
  for (int i = 0; i < 1000; ++i) REQUIRE(d.next_u64() == e.next_u64());
}

TEST_CASE("randn moments over 1e6 samples") {
  RngStream s(2024);
  const auto v = randn(s, 1'000'000);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("randn_complex has unit second moment and balanced parts") {
  RngStream s(99);
  const auto v = randn_complex(s, 1'000'000);
  double power = 0.0, re2 = 0.0;
  for (const auto& x : v) {
    power += std::norm(x);
    re2 += x.real() * x.real();
  }
  power /= static_cast<double>(v.size());
  re2 /= static_cast<double>(v.size());
  CHECK(std::abs(power - 1.0) < 0.02);
  CHECK(std::abs(re2 - 0.5) < 0.01);
}

TEST_CASE("below is uniform and in range") {
  RngStream s(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70'000; ++i) {
    const auto k = s.below(7);
    REQUIRE(k < 7);
    ++counts[k];
  }
  for (int c : counts) CHECK(std::abs(c - 10'000) < 500);
  CHECK_THROWS_AS(s.below(0), Error);
}

TEST_CASE("derive_seed separates tags") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}
