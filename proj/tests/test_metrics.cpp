#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "s3pr/metrics.hpp"

using namespace s3pr;

namespace {

// Brute-force flip by index arithmetic.
RealImage flip_oracle(const RealImage& x, bool lr, bool ud) {
  RealImage out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c)
      out(r, c) = x(ud ? x.rows() - 1 - r : r, lr ? x.cols() - 1 - c : c);
  return out;
}

double nmse_oracle(const RealImage& e, const RealImage& t) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    num += (e[i] - t[i]) * (e[i] - t[i]);
    den += t[i] * t[i];
  }
  return num / den;
}

// Enumerates every (permutation, signs, flips) element of the group jointly.
double group_oracle(const std::vector<RealImage>& est, const std::vector<RealImage>& truth, bool flips) {
  const std::size_t count = truth.size();
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  const std::size_t per_source = flips ? 8 : 2;
  std::size_t combos = 1;
  for (std::size_t l = 0; l < count; ++l) combos *= per_source;
  double best = INFINITY;
  do {
    for (std::size_t code = 0; code < combos; ++code) {
      std::size_t rest = code;
      double total = 0.0;
      for (std::size_t l = 0; l < count; ++l) {
        const std::size_t g = rest % per_source;
        rest /= per_source;
        RealImage e = flip_oracle(est[perm[l]], g & 2, g & 4);
        if (g & 1)
          for (double& v : e.values()) v = -v;
        total += nmse_oracle(e, truth[l]);
      }
      best = std::min(best, total / static_cast<double>(count));
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<RealImage> random_images(RngStream& s, std::size_t count, std::size_t side = 6) {
  std::vector<RealImage> out;
  for (std::size_t l = 0; l < count; ++l) out.push_back(randn(s, side, side));
  return out;
}

RealImage negate(RealImage x) {
  for (double& v : x.values()) v = -v;
  return x;
}

}  // namespace

TEST_CASE("nmse basics") {
  RealImage t(2, 2, std::vector<double>{1, 0, 0, 0});
  CHECK(nmse(t, t) == 0.0);
  CHECK(nmse(RealImage(2, 2), t) == 1.0);
  CHECK(nmse(negate(t), t) == 4.0);
  CHECK_THROWS_AS(nmse(t, RealImage(2, 2)), Error);
  CHECK_THROWS_AS(nmse(RealImage(3, 3), t), Error);
}

TEST_CASE("apply_flip matches index arithmetic") {
  RngStream s(1);
  const auto x = randn(s, 4, 5);
  CHECK(apply_flip(x, Flip::none) == x);
  CHECK(apply_flip(x, Flip::left_right) == flip_oracle(x, true, false));
  CHECK(apply_flip(x, Flip::up_down) == flip_oracle(x, false, true));
  CHECK(apply_flip(x, Flip::both) == flip_oracle(x, true, true));
  CHECK(apply_flip(apply_flip(x, Flip::both), Flip::both) == x);
}

TEST_CASE("group sizes") {
  CHECK(ambiguity_group_size(1, OperatorMode::gaussian) == 2);
  CHECK(ambiguity_group_size(2, OperatorMode::cdp) == 8);
  CHECK(ambiguity_group_size(2, OperatorMode::fourier) == 128);
  CHECK(ambiguity_group_size(4, OperatorMode::fourier) == 24 * 16 * 256);
}

TEST_CASE("resolved NMSE is invariant to the ambiguity group") {
  RngStream s(2);
  for (std::size_t count = 1; count <= 3; ++count) {
    const auto truth = random_images(s, count);
    SUBCASE("labelling and sign") {
      std::vector<RealImage> est(truth.rbegin(), truth.rend());
      est[0] = negate(est[0]);
      for (auto mode : {OperatorMode::gaussian, OperatorMode::cdp, OperatorMode::fourier})
        CHECK(resolved_nmse(est, truth, mode).value == 0.0);
    }
    SUBCASE("flips count only for Fourier measurements") {
      std::vector<RealImage> est = truth;
      est[0] = apply_flip(est[0], Flip::both);
      CHECK(resolved_nmse(est, truth, OperatorMode::fourier).value == 0.0);
      CHECK(resolved_nmse(est, truth, OperatorMode::gaussian).value > 0.0);
    }
  }
}

TEST_CASE("resolved NMSE equals a joint brute-force search") {
  RngStream s(3);
  for (std::size_t count = 1; count <= 3; ++count)
    for (int trial = 0; trial < 4; ++trial) {
      const auto truth = random_images(s, count);
      auto est = random_images(s, count);
      // Mix in partial structure so the minimiser is not trivial.
      for (std::size_t l = 0; l < count; ++l)
        for (std::size_t i = 0; i < est[l].size(); ++i) est[l][i] = 0.3 * est[l][i] - truth[(l + 1) % count][i];
      for (bool fourier : {false, true}) {
        const auto mode = fourier ? OperatorMode::fourier : OperatorMode::gaussian;
        const auto r = resolved_nmse(est, truth, mode);
        CHECK(r.value == doctest::Approx(group_oracle(est, truth, fourier)).epsilon(1e-12));

        // The reported matching reproduces the value.
        double total = 0.0;
        for (std::size_t l = 0; l < count; ++l) {
          RealImage e = apply_flip(est[r.matching.permutation[l]], r.matching.flips[l]);
          if (r.matching.signs[l] < 0) e = negate(e);
          const double v = nmse_oracle(e, truth[l]);
          CHECK(v == doctest::Approx(r.matching.per_source[l]).epsilon(1e-12));
          total += v;
          if (!fourier) CHECK(r.matching.flips[l] == Flip::none);
        }
        CHECK(total / count == doctest::Approx(r.value).epsilon(1e-12));
      }
    }
}

TEST_CASE("resolved NMSE for two swapped, negated sources") {
  RealImage a(2, 2, std::vector<double>{1, 2, 3, 4});
  RealImage b(2, 2, std::vector<double>{0, 1, 0, 1});
  const std::vector<RealImage> truth{a, b}, est{b, negate(a)};
  const auto r = resolved_nmse(est, truth, OperatorMode::cdp);
  CHECK(r.value == 0.0);
  CHECK(r.matching.permutation == std::vector<std::size_t>{1, 0});
  CHECK(r.matching.signs == std::vector<int>{-1, 1});
}

TEST_CASE("resolved NMSE argument checks") {
  RngStream s(4);
  const auto five = random_images(s, 5);
  CHECK_THROWS_WITH_AS(resolved_nmse(five, five, OperatorMode::gaussian), doctest::Contains("more than 4"), Error);
  const auto two = random_images(s, 2);
  CHECK_THROWS_AS(resolved_nmse(two, random_images(s, 3), OperatorMode::gaussian), Error);
  const auto four = random_images(s, 4);
  CHECK(resolved_nmse(four, four, OperatorMode::fourier).value == 0.0);
}

TEST_CASE("measurement_residual is zero at the truth and positive elsewhere") {
  RngStream s(5);
  const auto a = make_cdp(36, 2);
  const auto truth = random_images(s, 2);
  const auto y = observe(a, SourceSet{truth, {}}, {}).y;
  CHECK(measurement_residual(a, y, truth) < 1e-24);
  CHECK(measurement_residual(a, y, random_images(s, 2)) > 1e-3);
}
