#include "s3pr/measurement.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "binary_io.hpp"

namespace s3pr {

std::string to_string(OperatorMode mode) {
  switch (mode) {
    case OperatorMode::gaussian: return "gaussian";
    case OperatorMode::cdp: return "cdp";
    case OperatorMode::fourier: return "fourier";
  }
  return "unknown";
}

OperatorMode parse_operator_mode(const std::string& text) {
  if (text == "gaussian") return OperatorMode::gaussian;
  if (text == "cdp") return OperatorMode::cdp;
  if (text == "fourier") return OperatorMode::fourier;
  throw Error("unknown operator mode '" + text + "' (expected gaussian, cdp or fourier)");
}

namespace {

std::size_t side_of(std::size_t n) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (n == 0 || side * side != n) throw Error("measurement: n must be a positive perfect square");
  return side;
}

}  // namespace

MeasurementOperator make_gaussian(std::size_t n, std::size_t m, std::uint64_t seed) {
  MeasurementOperator a;
  a.mode_ = OperatorMode::gaussian;
  a.side_ = side_of(n);
  a.seed_ = seed;
  if (m != kOversampling * n) throw Error("make_gaussian: m must equal 4n");
  RngStream stream(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  a.dense_re_.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  a.dense_im_.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  // Drawn row by row so the stream order matches the row-major layout.
  for (Eigen::Index i = 0; i < a.dense_re_.rows(); ++i) {
    const auto row = randn_complex(stream, n);
    for (Eigen::Index j = 0; j < a.dense_re_.cols(); ++j) {
      a.dense_re_(i, j) = scale * row[static_cast<std::size_t>(j)].real();
      a.dense_im_(i, j) = scale * row[static_cast<std::size_t>(j)].imag();
    }
  }
  return a;
}

MeasurementOperator make_cdp(std::size_t n, std::uint64_t seed) {
  MeasurementOperator a;
  a.mode_ = OperatorMode::cdp;
  a.side_ = side_of(n);
  a.seed_ = seed;
  RngStream stream(seed);
  for (std::size_t k = 0; k < kCdpMasks; ++k) {
    ComplexImage mask(a.side_, a.side_);
    for (auto& v : mask.values()) v = std::polar(1.0, 2.0 * std::numbers::pi * stream.uniform());
    a.masks_.push_back(std::move(mask));
  }
  return a;
}

MeasurementOperator make_fourier(std::size_t n) {
  MeasurementOperator a;
  a.mode_ = OperatorMode::fourier;
  a.side_ = side_of(n);
  return a;
}

MeasurementOperator make_operator(OperatorMode mode, std::size_t n, std::uint64_t seed) {
  switch (mode) {
    case OperatorMode::gaussian: return make_gaussian(n, kOversampling * n, seed);
    case OperatorMode::cdp: return make_cdp(n, seed);
    case OperatorMode::fourier: return make_fourier(n);
  }
  throw Error("make_operator: unknown mode");
}

void MeasurementOperator::check_input(std::size_t rows, std::size_t cols) const {
  if (rows != side_ || cols != side_) throw Error("measurement: input shape does not match operator");
}

std::vector<Complex> MeasurementOperator::apply(const RealImage& x) const {
  check_input(x.rows(), x.cols());
  if (mode_ != OperatorMode::gaussian) return apply(to_complex(x));
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXd re = dense_re_ * xv;
  const Eigen::VectorXd im = dense_im_ * xv;
  std::vector<Complex> out(m());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {re(static_cast<Eigen::Index>(i)), im(static_cast<Eigen::Index>(i))};
  return out;
}

std::vector<Complex> MeasurementOperator::apply(const ComplexImage& x) const {
  check_input(x.rows(), x.cols());
  std::vector<Complex> out;
  out.reserve(m());
  switch (mode_) {
    case OperatorMode::gaussian: {
      Eigen::VectorXd xr(static_cast<Eigen::Index>(n())), xi(static_cast<Eigen::Index>(n()));
      for (std::size_t j = 0; j < n(); ++j) {
        xr(static_cast<Eigen::Index>(j)) = x[j].real();
        xi(static_cast<Eigen::Index>(j)) = x[j].imag();
      }
      const Eigen::VectorXd re = dense_re_ * xr - dense_im_ * xi;
      const Eigen::VectorXd im = dense_re_ * xi + dense_im_ * xr;
      for (Eigen::Index i = 0; i < re.size(); ++i) out.emplace_back(re(i), im(i));
      break;
    }
    case OperatorMode::cdp:
      for (const auto& mask : masks_) {
        ComplexImage modulated(side_, side_);
        for (std::size_t j = 0; j < n(); ++j) modulated[j] = mask[j] * x[j];
        const auto block = fft2_unitary(modulated);
        out.insert(out.end(), block.values().begin(), block.values().end());
      }
      break;
    case OperatorMode::fourier: {
      ComplexImage padded(2 * side_, 2 * side_);
      for (std::size_t r = 0; r < side_; ++r)
        for (std::size_t c = 0; c < side_; ++c) padded(r, c) = x(r, c);
      const auto spectrum = fft2_unitary(padded);
      out.assign(spectrum.values().begin(), spectrum.values().end());
      break;
    }
  }
  return out;
}

ComplexImage MeasurementOperator::adjoint_apply(std::span<const Complex> v) const {
  if (v.size() != m()) throw Error("measurement: adjoint input has wrong length");
  ComplexImage out(side_, side_);
  switch (mode_) {
    case OperatorMode::gaussian: {
      Eigen::VectorXd vr(static_cast<Eigen::Index>(m())), vi(static_cast<Eigen::Index>(m()));
      for (std::size_t i = 0; i < m(); ++i) {
        vr(static_cast<Eigen::Index>(i)) = v[i].real();
        vi(static_cast<Eigen::Index>(i)) = v[i].imag();
      }
      // (Re - i Im)^T (vr + i vi)
      const Eigen::VectorXd re = dense_re_.transpose() * vr + dense_im_.transpose() * vi;
      const Eigen::VectorXd im = dense_re_.transpose() * vi - dense_im_.transpose() * vr;
      for (std::size_t j = 0; j < n(); ++j) out[j] = {re(static_cast<Eigen::Index>(j)), im(static_cast<Eigen::Index>(j))};
      break;
    }
    case OperatorMode::cdp:
      for (std::size_t k = 0; k < masks_.size(); ++k) {
        ComplexImage block(side_, side_, std::vector<Complex>(v.begin() + static_cast<std::ptrdiff_t>(k * n()),
                                                              v.begin() + static_cast<std::ptrdiff_t>((k + 1) * n())));
        const auto back = ifft2_unitary(block);
        for (std::size_t j = 0; j < n(); ++j) out[j] += std::conj(masks_[k][j]) * back[j];
      }
      break;
    case OperatorMode::fourier: {
      const ComplexImage spectrum(2 * side_, 2 * side_, std::vector<Complex>(v.begin(), v.end()));
      const auto back = ifft2_unitary(spectrum);
      for (std::size_t r = 0; r < side_; ++r)
        for (std::size_t c = 0; c < side_; ++c) out(r, c) = back(r, c);
      break;
    }
  }
  return out;
}

RealImage MeasurementOperator::adjoint_real(std::span<const Complex> v) const {
  if (mode_ != OperatorMode::gaussian) return real_part(adjoint_apply(v));
  if (v.size() != m()) throw Error("measurement: adjoint input has wrong length");
  Eigen::VectorXd vr(static_cast<Eigen::Index>(m())), vi(static_cast<Eigen::Index>(m()));
  for (std::size_t i = 0; i < m(); ++i) {
    vr(static_cast<Eigen::Index>(i)) = v[i].real();
    vi(static_cast<Eigen::Index>(i)) = v[i].imag();
  }
  const Eigen::VectorXd re = dense_re_.transpose() * vr + dense_im_.transpose() * vi;
  return RealImage(side_, side_, std::vector<double>(re.data(), re.data() + re.size()));
}

std::vector<double> MeasurementOperator::intensity(const RealImage& x) const {
  const auto ax = apply(x);
  std::vector<double> out(ax.size());
  for (std::size_t i = 0; i < ax.size(); ++i) out[i] = std::norm(ax[i]);
  return out;
}

namespace {

constexpr char kOperatorMagic[8] = {'D', 'S', '3', 'P', 'R', 'O', '1', '\0'};

}  // namespace

void save_operator(const MeasurementOperator& a, std::ostream& out, bool include_dense) {
  io::Writer w(out);
  w.bytes(kOperatorMagic, sizeof(kOperatorMagic));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(a.mode()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.side()));
  w.put<std::uint64_t>(a.seed());
  const bool dense = include_dense && a.mode() == OperatorMode::gaussian;
  w.put<std::uint8_t>(dense ? 1 : 0);
  if (dense) {
    for (const Eigen::MatrixXd* part : {&a.dense_real(), &a.dense_imag()})
      for (Eigen::Index i = 0; i < part->rows(); ++i)
        for (Eigen::Index j = 0; j < part->cols(); ++j) w.put<double>((*part)(i, j));
  }
  if (!out) throw Error("save_operator: write failed");
}

void save_operator(const MeasurementOperator& a, const std::filesystem::path& path, bool include_dense) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_operator: cannot open " + path.string());
  save_operator(a, out, include_dense);
}

MeasurementOperator load_operator(std::istream& in) {
  io::Reader r(in, "load_operator");
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (!std::equal(magic, magic + 8, kOperatorMagic)) throw Error("load_operator: bad magic");
  const auto mode_tag = r.get<std::uint8_t>();
  if (mode_tag > 2) throw Error("load_operator: unknown mode tag");
  const auto mode = static_cast<OperatorMode>(mode_tag);
  const std::size_t side = r.get<std::uint32_t>();
  const auto seed = r.get<std::uint64_t>();
  const bool dense = r.get<std::uint8_t>() != 0;
  if (side == 0 || side > 4096) throw Error("load_operator: implausible image side");
  if (!dense) return make_operator(mode, side * side, seed);
  if (mode != OperatorMode::gaussian) throw Error("load_operator: dense payload only valid for gaussian mode");
  MeasurementOperator a;
  a.mode_ = mode;
  a.side_ = side;
  a.seed_ = seed;
  const auto rows = static_cast<Eigen::Index>(a.m()), cols = static_cast<Eigen::Index>(a.n());
  for (Eigen::MatrixXd* part : {&a.dense_re_, &a.dense_im_}) {
    part->resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) (*part)(i, j) = r.get<double>();
  }
  return a;
}

MeasurementOperator load_operator(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_operator: cannot open " + path.string());
  return load_operator(in);
}

Observation observe(const MeasurementOperator& a, const SourceSet& sources, const NoiseSpec& noise) {
  if (!(noise.snr > 0)) throw Error("observe: snr must be positive");
  if (sources.sources.empty()) throw Error("observe: no sources");
  Observation obs;
  obs.snr = noise.snr;
  obs.noise_seed = noise.seed;
  obs.clean.assign(a.m(), 0.0);
  for (const auto& x : sources.sources) {
    const auto inten = a.intensity(x);
    for (std::size_t i = 0; i < inten.size(); ++i) obs.clean[i] += inten[i];
  }
  obs.y = obs.clean;
  if (std::isfinite(noise.snr)) {
    const double mean_power = squared_norm(obs.clean) / static_cast<double>(obs.clean.size());
    const double sigma = std::sqrt(mean_power / noise.snr);
    RngStream stream(noise.seed);
    for (auto& v : obs.y) v += sigma * stream.normal();
  }
  obs.truth = sources;
  return obs;
}

std::vector<double> measurement_residual_vector(const MeasurementOperator& a, std::span<const double> y,
                                                std::span<const RealImage> estimates) {
  if (y.size() != a.m()) throw Error("residual: measurement length does not match operator");
  std::vector<double> r(y.begin(), y.end());
  for (const auto& x : estimates) {
    const auto inten = a.intensity(x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= inten[i];
  }
  return r;
}

RealImage residual_gradient(const MeasurementOperator& a, std::span<const double> residual,
                            std::span<const Complex> ax) {
  if (residual.size() != a.m() || ax.size() != a.m()) throw Error("residual_gradient: length mismatch");
  std::vector<Complex> weighted(ax.size());
  for (std::size_t i = 0; i < ax.size(); ++i) weighted[i] = residual[i] * ax[i];
  RealImage g = a.adjoint_real(weighted);
  for (auto& v : g.values()) v *= -4.0;
  return g;
}

RealImage residual_gradient(const MeasurementOperator& a, std::span<const double> y,
                            std::span<const RealImage> estimates, std::size_t l) {
  if (l >= estimates.size()) throw Error("residual_gradient: source index out of range");
  const auto r = measurement_residual_vector(a, y, estimates);
  return residual_gradient(a, r, a.apply(estimates[l]));
}

}  // namespace s3pr
