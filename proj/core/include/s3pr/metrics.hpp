#pragma once

// NMSE scoring with the solution ambiguities (labeling, sign and, for
// Fourier measurements, left-right / up-down flips) quotiented out.

#include <cstdint>
#include <span>
#include <vector>

#include "s3pr/measurement.hpp"
#include "s3pr/ndcore.hpp"

namespace s3pr {

enum class Flip : std::uint8_t { none = 0, left_right = 1, up_down = 2, both = 3 };

RealImage apply_flip(const RealImage& img, Flip flip);

/// ||estimate - truth||^2 / ||truth||^2.
double nmse(const RealImage& estimate, const RealImage& truth);

/// Transform mapping estimates onto truths: truth l is compared against
/// signs[l] * flip(estimates[permutation[l]], flips[l]).
struct Matching {
  std::vector<std::size_t> permutation;
  std::vector<int> signs;
  std::vector<Flip> flips;
  std::vector<double> per_source;
};

struct ResolvedNmse {
  double value = 0.0;
  Matching matching;
};

inline constexpr std::size_t kMaxResolvedSources = 4;

/// Number of group elements searched: L! * 2^L * (4^L in Fourier mode).
std::size_t ambiguity_group_size(std::size_t sources, OperatorMode mode);

/// Minimum over the ambiguity group of the mean per-source NMSE. Refuses L > 4.
ResolvedNmse resolved_nmse(std::span<const RealImage> estimates, std::span<const RealImage> truths, OperatorMode mode);

/// ||y - sum_l |A x_l|^2||^2.
double measurement_residual(const MeasurementOperator& a, std::span<const double> y,
                            std::span<const RealImage> estimates);

}  // namespace s3pr
