#include "s3pr/ndcore.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

namespace s3pr {

ComplexImage to_complex(const RealImage& img) {
  ComplexImage out(img.rows(), img.cols());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i];
  return out;
}

RealImage real_part(const ComplexImage& img) {
  RealImage out(img.rows(), img.cols());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i].real();
  return out;
}

ComplexImage zero_pad(const RealImage& img, std::size_t rows, std::size_t cols) {
  if (rows < img.rows() || cols < img.cols()) throw Error("zero_pad: target smaller than image");
  ComplexImage out(rows, cols);
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c) out(r, c) = img(r, c);
  return out;
}

namespace {

// Plans are created once per (rows, cols, sign) and executed through the
// new-array interface, which FFTW guarantees to be thread-safe.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(std::size_t rows, std::size_t cols, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(rows, cols, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<Complex> scratch_in(rows * cols), scratch_out(rows * cols);
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols),
                                      reinterpret_cast<fftw_complex*>(scratch_in.data()),
                                      reinterpret_cast<fftw_complex*>(scratch_out.data()), sign,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (plan == nullptr) throw Error("fft: FFTW failed to create a plan");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

ComplexImage transform(const ComplexImage& img, int sign) {
  if (img.empty()) throw Error("fft: empty image");
  if (!all_finite(img.values())) throw Error("fft: non-finite input");
  fftw_plan plan = plan_cache().get(img.rows(), img.cols(), sign);
  ComplexImage in = img;
  ComplexImage out(img.rows(), img.cols());
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(img.size()));
  for (auto& v : out.values()) v *= scale;
  return out;
}

}  // namespace

ComplexImage fft2_unitary(const ComplexImage& img) { return transform(img, FFTW_FORWARD); }

ComplexImage ifft2_unitary(const ComplexImage& img) { return transform(img, FFTW_BACKWARD); }

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double squared_norm(std::span<const Complex> v) {
  double s = 0.0;
  for (const Complex& x : v) s += std::norm(x);
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

bool all_finite(std::span<const Complex> v) {
  for (const Complex& x : v)
    if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) return false;
  return true;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& s : state_) s = splitmix64(x);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RngStream::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t bound) {
  if (bound == 0) throw Error("RngStream::below: zero bound");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

double RngStream::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t x = base ^ (tag * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  splitmix64(x);
  return splitmix64(x);
}

std::vector<double> randn(RngStream& stream, std::size_t count) {
  std::vector<double> out(count);
  for (auto& v : out) v = stream.normal();
  return out;
}

RealImage randn(RngStream& stream, std::size_t rows, std::size_t cols) {
  return RealImage(rows, cols, randn(stream, rows * cols));
}

std::vector<Complex> randn_complex(RngStream& stream, std::size_t count) {
  std::vector<Complex> out(count);
  const double s = std::sqrt(0.5);
  for (auto& v : out) {
    const double re = stream.normal();
    const double im = stream.normal();
    v = Complex(re * s, im * s);
  }
  return out;
}

}  // namespace s3pr
