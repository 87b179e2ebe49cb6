#pragma once

// Measurement operators A (Gaussian, coded diffraction, oversampled Fourier),
// the mixed-intensity forward model y = sum_l |A x_l|^2 + w and its data-term
// gradient.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s3pr/datasets.hpp"
#include "s3pr/ndcore.hpp"

namespace s3pr {

enum class OperatorMode { gaussian, cdp, fourier };

std::string to_string(OperatorMode mode);
OperatorMode parse_operator_mode(const std::string& text);

inline constexpr std::size_t kOversampling = 4;
inline constexpr std::size_t kCdpMasks = 4;

/// Linear map from real or complex side x side images (n = side^2, flattened
/// row-major) to C^m with m = 4n. Immutable once built.
class MeasurementOperator {
 public:
  OperatorMode mode() const { return mode_; }
  std::size_t side() const { return side_; }
  std::size_t n() const { return side_ * side_; }
  std::size_t m() const { return kOversampling * n(); }
  std::uint64_t seed() const { return seed_; }

  std::vector<Complex> apply(const RealImage& x) const;
  std::vector<Complex> apply(const ComplexImage& x) const;
  /// A^H v as a side x side complex image.
  ComplexImage adjoint_apply(std::span<const Complex> v) const;
  /// Re(A^H v); cheaper than adjoint_apply for the Gaussian mode.
  RealImage adjoint_real(std::span<const Complex> v) const;
  /// |A x|^2 elementwise.
  std::vector<double> intensity(const RealImage& x) const;

  const std::vector<ComplexImage>& masks() const { return masks_; }
  /// Real and imaginary parts of the dense Gaussian matrix (m x n).
  const Eigen::MatrixXd& dense_real() const { return dense_re_; }
  const Eigen::MatrixXd& dense_imag() const { return dense_im_; }

  friend MeasurementOperator make_gaussian(std::size_t n, std::size_t m, std::uint64_t seed);
  friend MeasurementOperator make_cdp(std::size_t n, std::uint64_t seed);
  friend MeasurementOperator make_fourier(std::size_t n);
  friend MeasurementOperator load_operator(std::istream& in);

 private:
  void check_input(std::size_t rows, std::size_t cols) const;

  OperatorMode mode_ = OperatorMode::gaussian;
  std::size_t side_ = 0;
  std::uint64_t seed_ = 0;
  Eigen::MatrixXd dense_re_, dense_im_;
  std::vector<ComplexImage> masks_;
};

/// Entries i.i.d. CN(0, 1/m). Requires n a perfect square and m = 4n.
MeasurementOperator make_gaussian(std::size_t n, std::size_t m, std::uint64_t seed);
/// Four unimodular masks with phases uniform on [0, 2 pi).
MeasurementOperator make_cdp(std::size_t n, std::uint64_t seed);
/// Zero-pad to (2 side) x (2 side), then unitary 2-D DFT.
MeasurementOperator make_fourier(std::size_t n);
MeasurementOperator make_operator(OperatorMode mode, std::size_t n, std::uint64_t seed);

// Operator file: "DS3PRO1\0" ; u8 mode ; u32 side ; u64 seed ; u8 has_dense ;
// [f64 real part (m x n row-major) ; f64 imaginary part] when has_dense.
void save_operator(const MeasurementOperator& a, std::ostream& out, bool include_dense = false);
void save_operator(const MeasurementOperator& a, const std::filesystem::path& path, bool include_dense = false);
MeasurementOperator load_operator(std::istream& in);
MeasurementOperator load_operator(const std::filesystem::path& path);

/// Linear signal-to-noise power ratio; infinity disables noise.
struct NoiseSpec {
  double snr = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
};

struct Observation {
  std::vector<double> y;
  std::vector<double> clean;  // noiseless sum of intensities
  double snr = std::numeric_limits<double>::infinity();
  std::uint64_t noise_seed = 0;
  std::optional<SourceSet> truth;
};

/// y = sum_l |A x_l|^2 + w with w ~ N(0, sigma^2 I), sigma^2 = mean(clean^2) / snr.
Observation observe(const MeasurementOperator& a, const SourceSet& sources, const NoiseSpec& noise);

/// r = y - sum_l |A x_l|^2.
std::vector<double> measurement_residual_vector(const MeasurementOperator& a, std::span<const double> y,
                                                std::span<const RealImage> estimates);

/// Gradient of ||y - sum_m |A x_m|^2||^2 with respect to the real image x_l:
/// -4 Re(A^H (r o A x_l)).
RealImage residual_gradient(const MeasurementOperator& a, std::span<const double> y,
                            std::span<const RealImage> estimates, std::size_t l);
/// Same gradient from a precomputed residual r and A x_l.
RealImage residual_gradient(const MeasurementOperator& a, std::span<const double> residual,
                            std::span<const Complex> ax);

}  // namespace s3pr
