#include "s3pr/metrics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace s3pr {

RealImage apply_flip(const RealImage& img, Flip flip) {
  const bool lr = flip == Flip::left_right || flip == Flip::both;
  const bool ud = flip == Flip::up_down || flip == Flip::both;
  RealImage out(img.rows(), img.cols());
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c)
      out(r, c) = img(ud ? img.rows() - 1 - r : r, lr ? img.cols() - 1 - c : c);
  return out;
}

double nmse(const RealImage& estimate, const RealImage& truth) {
  if (!estimate.same_shape(truth)) throw Error("nmse: shape mismatch");
  const double denom = squared_norm(truth.values());
  if (denom == 0.0) throw Error("nmse: truth has zero norm");
  double num = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = estimate[i] - truth[i];
    num += d * d;
  }
  return num / denom;
}

std::size_t ambiguity_group_size(std::size_t sources, OperatorMode mode) {
  std::size_t size = 1;
  for (std::size_t k = 2; k <= sources; ++k) size *= k;
  size <<= sources;
  if (mode == OperatorMode::fourier) size <<= 2 * sources;
  return size;
}

namespace {

struct PairwiseBest {
  double value = std::numeric_limits<double>::infinity();
  int sign = 1;
  Flip flip = Flip::none;
};

}  // namespace

ResolvedNmse resolved_nmse(std::span<const RealImage> estimates, std::span<const RealImage> truths, OperatorMode mode) {
  const std::size_t count = truths.size();
  if (estimates.size() != count) throw Error("resolved_nmse: estimate and truth counts differ");
  if (count == 0) throw Error("resolved_nmse: no sources");
  if (count > kMaxResolvedSources) throw Error("resolved_nmse: exhaustive search refused for more than 4 sources");

  // Sign and flip act per source, so the search factorizes: best transform for
  // every (truth, estimate) pair first, then the best permutation.
  const std::vector<Flip> flips = mode == OperatorMode::fourier
                                      ? std::vector<Flip>{Flip::none, Flip::left_right, Flip::up_down, Flip::both}
                                      : std::vector<Flip>{Flip::none};
  std::vector<std::vector<PairwiseBest>> table(count, std::vector<PairwiseBest>(count));
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t e = 0; e < count; ++e) {
      for (Flip f : flips) {
        RealImage candidate = apply_flip(estimates[e], f);
        for (int sign : {1, -1}) {
          if (sign < 0)
            for (auto& v : candidate.values()) v = -v;
          const double v = nmse(candidate, truths[t]);
          if (v < table[t][e].value) table[t][e] = {v, sign, f};
        }
      }
    }
  }

  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  ResolvedNmse best;
  best.value = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t t = 0; t < count; ++t) total += table[t][perm[t]].value;
    const double mean = total / static_cast<double>(count);
    if (mean < best.value) {
      best.value = mean;
      best.matching = Matching{perm, {}, {}, {}};
      for (std::size_t t = 0; t < count; ++t) {
        best.matching.signs.push_back(table[t][perm[t]].sign);
        best.matching.flips.push_back(table[t][perm[t]].flip);
        best.matching.per_source.push_back(table[t][perm[t]].value);
      }
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double measurement_residual(const MeasurementOperator& a, std::span<const double> y,
                            std::span<const RealImage> estimates) {
  return squared_norm(measurement_residual_vector(a, y, estimates));
}

}  // namespace s3pr
