#pragma once

// Numeric substrate: row-major 2-D grids, unitary 2-D FFT and a portable
// seeded random number generator.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace s3pr {

using Complex = std::complex<double>;

/// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major 2-D array. Entry (r, c) lives at index r * cols + c.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) throw Error("Grid: rows and cols must be positive");
  }
  Grid(std::size_t rows, std::size_t cols, std::vector<T> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (rows == 0 || cols == 0) throw Error("Grid: rows and cols must be positive");
    if (data_.size() != rows * cols) throw Error("Grid: value count does not match shape");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& vector() const { return data_; }

  bool same_shape(const Grid& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using RealImage = Grid<double>;
using ComplexImage = Grid<Complex>;

ComplexImage to_complex(const RealImage& img);
RealImage real_part(const ComplexImage& img);

/// Zero-pads img into the top-left corner of a rows x cols grid.
ComplexImage zero_pad(const RealImage& img, std::size_t rows, std::size_t cols);

/// Unitary 2-D DFT (scale 1/sqrt(rows*cols)). Throws on non-finite input.
ComplexImage fft2_unitary(const ComplexImage& img);
/// Exact inverse of fft2_unitary.
ComplexImage ifft2_unitary(const ComplexImage& img);

double squared_norm(std::span<const double> v);
double squared_norm(std::span<const Complex> v);
double dot(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v);
bool all_finite(std::span<const Complex> v);

/// xoshiro256** seeded through splitmix64. Normals come from the Box-Muller
/// transform applied to 53-bit uniforms on (0, 1]; the second variate of each
/// pair is cached. Streams are not shareable across threads.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  /// Uniform on (0, 1].
  double uniform();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// Mixes a base seed with a tag into an independent child seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

std::vector<double> randn(RngStream& stream, std::size_t count);
RealImage randn(RngStream& stream, std::size_t rows, std::size_t cols);
/// Independent real and imaginary parts, each N(0, 1/2).
std::vector<Complex> randn_complex(RngStream& stream, std::size_t count);

}  // namespace s3pr
