#include "s3pr/generator.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include "binary_io.hpp"

namespace s3pr {

namespace {

using Eigen::ArrayXXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Feature maps are (side*side) x channels matrices; row p = y * side + x.

MatrixXd im2col(const MatrixXd& in, std::size_t side) {
  const auto s = static_cast<Eigen::Index>(side);
  const Eigen::Index channels = in.cols();
  MatrixXd col = MatrixXd::Zero(s * s, channels * 9);
  for (Eigen::Index c = 0; c < channels; ++c) {
    for (Eigen::Index ky = 0; ky < 3; ++ky) {
      for (Eigen::Index kx = 0; kx < 3; ++kx) {
        auto dst = col.col(c * 9 + ky * 3 + kx);
        const auto src = in.col(c);
        for (Eigen::Index y = 0; y < s; ++y) {
          const Eigen::Index sy = y + ky - 1;
          if (sy < 0 || sy >= s) continue;
          const Eigen::Index x0 = std::max<Eigen::Index>(0, 1 - kx);
          const Eigen::Index x1 = std::min<Eigen::Index>(s, s + 1 - kx);
          for (Eigen::Index x = x0; x < x1; ++x) dst(y * s + x) = src(sy * s + x + kx - 1);
        }
      }
    }
  }
  return col;
}

MatrixXd col2im(const MatrixXd& col, std::size_t side, Eigen::Index channels) {
  const auto s = static_cast<Eigen::Index>(side);
  MatrixXd out = MatrixXd::Zero(s * s, channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    auto dst = out.col(c);
    for (Eigen::Index ky = 0; ky < 3; ++ky) {
      for (Eigen::Index kx = 0; kx < 3; ++kx) {
        const auto src = col.col(c * 9 + ky * 3 + kx);
        for (Eigen::Index y = 0; y < s; ++y) {
          const Eigen::Index sy = y + ky - 1;
          if (sy < 0 || sy >= s) continue;
          const Eigen::Index x0 = std::max<Eigen::Index>(0, 1 - kx);
          const Eigen::Index x1 = std::min<Eigen::Index>(s, s + 1 - kx);
          for (Eigen::Index x = x0; x < x1; ++x) dst(sy * s + x + kx - 1) += src(y * s + x);
        }
      }
    }
  }
  return out;
}

MatrixXd upsample(const MatrixXd& in, std::size_t side) {
  const auto s = static_cast<Eigen::Index>(side);
  const Eigen::Index t = 2 * s;
  MatrixXd out(t * t, in.cols());
  for (Eigen::Index c = 0; c < in.cols(); ++c)
    for (Eigen::Index y = 0; y < t; ++y)
      for (Eigen::Index x = 0; x < t; ++x) out(y * t + x, c) = in((y / 2) * s + x / 2, c);
  return out;
}

// Adjoint of nearest-neighbour upsampling: sum over each 2x2 block.
MatrixXd upsample_adjoint(const MatrixXd& in, std::size_t side) {
  const auto s = static_cast<Eigen::Index>(side);
  const Eigen::Index t = 2 * s;
  MatrixXd out = MatrixXd::Zero(s * s, in.cols());
  for (Eigen::Index c = 0; c < in.cols(); ++c)
    for (Eigen::Index y = 0; y < t; ++y)
      for (Eigen::Index x = 0; x < t; ++x) out((y / 2) * s + x / 2, c) += in(y * t + x, c);
  return out;
}

void batch_norm_inplace(MatrixXd& f, const BatchNormLayer& bn) {
  const Eigen::ArrayXd scale = bn.scale();
  for (Eigen::Index c = 0; c < f.cols(); ++c)
    f.col(c) = ((f.col(c).array() - bn.running_mean(c)) * scale(c) + bn.beta(c)).matrix();
}

void batch_norm_adjoint_inplace(MatrixXd& g, const BatchNormLayer& bn) {
  const Eigen::ArrayXd scale = bn.scale();
  for (Eigen::Index c = 0; c < g.cols(); ++c) g.col(c) *= scale(c);
}

MatrixXd conv(const MatrixXd& in, std::size_t side, const ConvLayer& layer) {
  MatrixXd out = im2col(in, side) * layer.weight.transpose();
  out.rowwise() += layer.bias.transpose();
  return out;
}

MatrixXd conv_adjoint(const MatrixXd& grad_out, std::size_t side, const ConvLayer& layer) {
  return col2im(grad_out * layer.weight, side, static_cast<Eigen::Index>(layer.in_channels));
}

MatrixXd leaky_relu(const ArrayXXd& x) { return (x > 0).select(x, kLeakySlope * x).matrix(); }

void leaky_relu_adjoint_inplace(MatrixXd& g, const ArrayXXd& input) {
  g = (input > 0).select(g.array(), kLeakySlope * g.array()).matrix();
}

void check_latent(const GeneratorNetwork& g, std::span<const double> z) {
  if (z.size() != g.arch.latent_dim) throw Error("generator: latent vector has wrong length");
  if (!all_finite(z)) throw Error("generator: non-finite latent vector");
}

}  // namespace

GeneratorTape forward_with_tape(const GeneratorNetwork& g, std::span<const double> z) {
  check_latent(g, z);
  const auto& a = g.arch;
  const std::size_t s0 = a.base_side, s1 = 2 * s0, s2 = 4 * s0;
  const Eigen::Map<const VectorXd> zv(z.data(), static_cast<Eigen::Index>(z.size()));

  VectorXd h = g.dense.weight.transpose() * zv + g.dense.bias;
  MatrixXd f = Eigen::Map<MatrixXd>(h.data(), static_cast<Eigen::Index>(s0 * s0),
                                    static_cast<Eigen::Index>(a.dense_channels));
  batch_norm_inplace(f, g.bn0);

  GeneratorTape tape;
  f = conv(upsample(f, s0), s1, g.conv1);
  batch_norm_inplace(f, g.bn1);
  tape.lrelu1_input = f.array();
  f = leaky_relu(tape.lrelu1_input);

  f = conv(upsample(f, s1), s2, g.conv2);
  batch_norm_inplace(f, g.bn2);
  tape.lrelu2_input = f.array();
  f = leaky_relu(tape.lrelu2_input);

  const MatrixXd pre = conv(f, s2, g.conv3);
  tape.output = RealImage(s2, s2);
  for (Eigen::Index p = 0; p < pre.rows(); ++p) tape.output[static_cast<std::size_t>(p)] = std::tanh(pre(p, 0));
  return tape;
}

RealImage forward(const GeneratorNetwork& g, std::span<const double> z) { return forward_with_tape(g, z).output; }

std::vector<double> vjp(const GeneratorNetwork& g, const GeneratorTape& tape, const RealImage& cotangent) {
  const auto& a = g.arch;
  const std::size_t s0 = a.base_side, s1 = 2 * s0, s2 = 4 * s0;
  if (cotangent.rows() != s2 || cotangent.cols() != s2) throw Error("vjp: cotangent has wrong shape");

  MatrixXd grad(static_cast<Eigen::Index>(s2 * s2), 1);
  for (std::size_t p = 0; p < cotangent.size(); ++p) {
    const double t = tape.output[p];
    grad(static_cast<Eigen::Index>(p), 0) = cotangent[p] * (1.0 - t * t);
  }
  grad = conv_adjoint(grad, s2, g.conv3);

  leaky_relu_adjoint_inplace(grad, tape.lrelu2_input);
  batch_norm_adjoint_inplace(grad, g.bn2);
  grad = upsample_adjoint(conv_adjoint(grad, s2, g.conv2), s1);

  leaky_relu_adjoint_inplace(grad, tape.lrelu1_input);
  batch_norm_adjoint_inplace(grad, g.bn1);
  grad = upsample_adjoint(conv_adjoint(grad, s1, g.conv1), s0);

  batch_norm_adjoint_inplace(grad, g.bn0);
  const Eigen::Map<const VectorXd> flat(grad.data(), grad.size());
  const VectorXd gz = g.dense.weight * flat;
  return {gz.data(), gz.data() + gz.size()};
}

std::vector<double> vjp(const GeneratorNetwork& g, std::span<const double> z, const RealImage& cotangent) {
  return vjp(g, forward_with_tape(g, z), cotangent);
}

namespace {

BatchNormLayer identity_batch_norm(std::size_t channels) {
  const auto c = static_cast<Eigen::Index>(channels);
  return {VectorXd::Ones(c), VectorXd::Zero(c), VectorXd::Zero(c), VectorXd::Ones(c)};
}

ConvLayer zero_conv(std::size_t in, std::size_t out) {
  return {in, out, MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * 9)),
          VectorXd::Zero(static_cast<Eigen::Index>(out))};
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

template <typename Derived>
void fill_normal(Eigen::DenseBase<Derived>& m, RngStream& stream, double stddev) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = round_to_float(stddev * stream.normal());
}

}  // namespace

GeneratorNetwork zero_generator(const GeneratorArchitecture& arch) {
  GeneratorNetwork g;
  g.arch = arch;
  const auto features = static_cast<Eigen::Index>(arch.base_side * arch.base_side * arch.dense_channels);
  g.dense = {MatrixXd::Zero(static_cast<Eigen::Index>(arch.latent_dim), features), VectorXd::Zero(features)};
  g.bn0 = identity_batch_norm(arch.dense_channels);
  g.conv1 = zero_conv(arch.dense_channels, arch.mid_channels);
  g.bn1 = identity_batch_norm(arch.mid_channels);
  g.conv2 = zero_conv(arch.mid_channels, arch.last_channels);
  g.bn2 = identity_batch_norm(arch.last_channels);
  g.conv3 = zero_conv(arch.last_channels, 1);
  return g;
}

GeneratorNetwork random_generator(const GeneratorArchitecture& arch, RngStream& stream) {
  GeneratorNetwork g = zero_generator(arch);
  // Gains of sqrt(2) on the rectified layers keep activations O(1).
  fill_normal(g.dense.weight, stream, 1.0 / std::sqrt(static_cast<double>(arch.latent_dim)));
  fill_normal(g.dense.bias, stream, 0.1);
  fill_normal(g.conv1.weight, stream, std::sqrt(2.0 / (9.0 * static_cast<double>(arch.dense_channels))));
  fill_normal(g.conv1.bias, stream, 0.1);
  fill_normal(g.conv2.weight, stream, std::sqrt(2.0 / (9.0 * static_cast<double>(arch.mid_channels))));
  fill_normal(g.conv2.bias, stream, 0.1);
  fill_normal(g.conv3.weight, stream, std::sqrt(2.0 / (9.0 * static_cast<double>(arch.last_channels))));
  fill_normal(g.conv3.bias, stream, 0.1);
  for (BatchNormLayer* bn : {&g.bn0, &g.bn1, &g.bn2}) {
    for (Eigen::Index c = 0; c < bn->gamma.size(); ++c) {
      bn->gamma(c) = round_to_float(1.0 + 0.1 * stream.normal());
      bn->beta(c) = round_to_float(0.1 * stream.normal());
      bn->running_mean(c) = round_to_float(0.1 * stream.normal());
      bn->running_var(c) = round_to_float(1.0 + 0.2 * stream.uniform());
    }
  }
  return g;
}

namespace {

void expect_shape(std::size_t layer, const char* what, Eigen::Index rows, Eigen::Index cols, std::size_t want_rows,
                  std::size_t want_cols) {
  if (rows != static_cast<Eigen::Index>(want_rows) || cols != static_cast<Eigen::Index>(want_cols))
    throw Error("layer " + std::to_string(layer) + " shape mismatch (" + what + ")");
}

void validate_bn(std::size_t layer, const BatchNormLayer& bn, std::size_t channels) {
  for (const VectorXd* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var})
    expect_shape(layer, "batch norm", v->size(), 1, channels, 1);
  if ((bn.running_var.array() <= 0).any()) throw Error("layer " + std::to_string(layer) + " has non-positive variance");
}

void validate_conv(std::size_t layer, const ConvLayer& c, std::size_t in, std::size_t out) {
  if (c.in_channels != in || c.out_channels != out) throw Error("layer " + std::to_string(layer) + " shape mismatch (conv)");
  expect_shape(layer, "conv kernel", c.weight.rows(), c.weight.cols(), out, in * 9);
  expect_shape(layer, "conv bias", c.bias.size(), 1, out, 1);
}

// Layer indices in the file sequence.
constexpr std::array<LayerKind, 13> kSequence = {
    LayerKind::dense,    LayerKind::reshape,    LayerKind::batch_norm, LayerKind::upsample, LayerKind::conv,
    LayerKind::batch_norm, LayerKind::leaky_relu, LayerKind::upsample, LayerKind::conv,     LayerKind::batch_norm,
    LayerKind::leaky_relu, LayerKind::conv,      LayerKind::tanh};

}  // namespace

void GeneratorNetwork::validate() const {
  const std::size_t features = arch.base_side * arch.base_side * arch.dense_channels;
  expect_shape(0, "dense weight", dense.weight.rows(), dense.weight.cols(), arch.latent_dim, features);
  expect_shape(0, "dense bias", dense.bias.size(), 1, features, 1);
  validate_bn(2, bn0, arch.dense_channels);
  validate_conv(4, conv1, arch.dense_channels, arch.mid_channels);
  validate_bn(5, bn1, arch.mid_channels);
  validate_conv(8, conv2, arch.mid_channels, arch.last_channels);
  validate_bn(9, bn2, arch.last_channels);
  validate_conv(11, conv3, arch.last_channels, 1);
}

namespace {

constexpr char kWeightMagic[8] = {'D', 'S', '3', 'P', 'R', 'W', '1', '\0'};
constexpr std::uint32_t kWeightVersion = 1;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;
};

void write_tensor(io::Writer& w, std::initializer_list<std::uint32_t> dims, const double* data) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dims.size()));
  std::size_t count = 1;
  for (auto d : dims) {
    w.put<std::uint32_t>(d);
    count *= d;
  }
  for (std::size_t i = 0; i < count; ++i) w.put<float>(static_cast<float>(data[i]));
}

void write_layer_header(io::Writer& w, LayerKind kind, std::uint32_t params) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(kind));
  w.put<std::uint32_t>(params);
}

void write_vector(io::Writer& w, const VectorXd& v) {
  write_tensor(w, {static_cast<std::uint32_t>(v.size())}, v.data());
}

void write_bn(io::Writer& w, const BatchNormLayer& bn) {
  write_layer_header(w, LayerKind::batch_norm, 4);
  for (const VectorXd* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) write_vector(w, *v);
}

void write_conv(io::Writer& w, const ConvLayer& c) {
  write_layer_header(w, LayerKind::conv, 2);
  // (out, in, 3, 3) row-major equals the row-major flattening of weight.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = c.weight;
  write_tensor(w, {static_cast<std::uint32_t>(c.out_channels), static_cast<std::uint32_t>(c.in_channels), 3, 3}, rm.data());
  write_vector(w, c.bias);
}

Tensor read_tensor(io::Reader& r, std::size_t layer) {
  Tensor t;
  const auto rank = r.get<std::uint8_t>();
  if (rank == 0 || rank > 4) throw Error("layer " + std::to_string(layer) + " has invalid tensor rank");
  std::size_t count = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    t.dims.push_back(r.get<std::uint32_t>());
    count *= t.dims.back();
    if (count > (std::size_t{1} << 28)) throw Error("layer " + std::to_string(layer) + " tensor too large");
  }
  t.data.resize(count);
  for (auto& v : t.data) v = static_cast<double>(r.get<float>());
  return t;
}

void expect_dims(const Tensor& t, std::size_t layer, std::vector<std::uint32_t> dims) {
  if (t.dims != dims) throw Error("layer " + std::to_string(layer) + " shape mismatch");
}

VectorXd to_vector(const Tensor& t) { return Eigen::Map<const VectorXd>(t.data.data(), static_cast<Eigen::Index>(t.data.size())); }

BatchNormLayer read_bn(const std::vector<Tensor>& params, std::size_t layer, std::size_t channels) {
  for (const auto& p : params) expect_dims(p, layer, {static_cast<std::uint32_t>(channels)});
  BatchNormLayer bn{to_vector(params[0]), to_vector(params[1]), to_vector(params[2]), to_vector(params[3])};
  if ((bn.running_var.array() <= 0).any()) throw Error("layer " + std::to_string(layer) + " has non-positive variance");
  return bn;
}

ConvLayer read_conv(const std::vector<Tensor>& params, std::size_t layer, std::size_t in, std::size_t out) {
  expect_dims(params[0], layer, {static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in), 3, 3});
  expect_dims(params[1], layer, {static_cast<std::uint32_t>(out)});
  ConvLayer c{in, out, {}, to_vector(params[1])};
  c.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      params[0].data.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * 9));
  return c;
}

std::size_t expected_params(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense:
    case LayerKind::conv:
      return 2;
    case LayerKind::batch_norm:
      return 4;
    default:
      return 0;
  }
}

}  // namespace

void save_weights(const GeneratorNetwork& g, std::ostream& out) {
  g.validate();
  io::Writer w(out);
  w.bytes(kWeightMagic, sizeof(kWeightMagic));
  w.put<std::uint32_t>(kWeightVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kSequence.size()));

  write_layer_header(w, LayerKind::dense, 2);
  // Dense weight is stored (latent_dim, out_features) row-major.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dw = g.dense.weight;
  write_tensor(w, {static_cast<std::uint32_t>(dw.rows()), static_cast<std::uint32_t>(dw.cols())}, dw.data());
  write_vector(w, g.dense.bias);
  write_layer_header(w, LayerKind::reshape, 0);
  write_bn(w, g.bn0);
  write_layer_header(w, LayerKind::upsample, 0);
  write_conv(w, g.conv1);
  write_bn(w, g.bn1);
  write_layer_header(w, LayerKind::leaky_relu, 0);
  write_layer_header(w, LayerKind::upsample, 0);
  write_conv(w, g.conv2);
  write_bn(w, g.bn2);
  write_layer_header(w, LayerKind::leaky_relu, 0);
  write_conv(w, g.conv3);
  write_layer_header(w, LayerKind::tanh, 0);
  if (!out) throw Error("save_weights: write failed");
}

void save_weights(const GeneratorNetwork& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_weights: cannot open " + path.string());
  save_weights(g, out);
}

GeneratorNetwork load_weights(std::istream& in, const GeneratorArchitecture& arch) {
  io::Reader r(in, "load_weights");
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (!std::equal(magic, magic + 8, kWeightMagic)) throw Error("load_weights: bad magic");
  if (r.get<std::uint32_t>() != kWeightVersion) throw Error("load_weights: unsupported version");
  if (r.get<std::uint32_t>() != kSequence.size()) throw Error("load_weights: unexpected layer count");

  GeneratorNetwork g;
  g.arch = arch;
  const std::size_t features = arch.base_side * arch.base_side * arch.dense_channels;
  for (std::size_t layer = 0; layer < kSequence.size(); ++layer) {
    const auto kind = static_cast<LayerKind>(r.get<std::uint8_t>());
    if (kind != kSequence[layer]) throw Error("layer " + std::to_string(layer) + " has unexpected kind");
    const auto count = r.get<std::uint32_t>();
    if (count != expected_params(kind)) throw Error("layer " + std::to_string(layer) + " has unexpected parameter count");
    std::vector<Tensor> params;
    for (std::uint32_t i = 0; i < count; ++i) params.push_back(read_tensor(r, layer));

    switch (layer) {
      case 0:
        expect_dims(params[0], layer, {static_cast<std::uint32_t>(arch.latent_dim), static_cast<std::uint32_t>(features)});
        expect_dims(params[1], layer, {static_cast<std::uint32_t>(features)});
        g.dense.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            params[0].data.data(), static_cast<Eigen::Index>(arch.latent_dim), static_cast<Eigen::Index>(features));
        g.dense.bias = to_vector(params[1]);
        break;
      case 2: g.bn0 = read_bn(params, layer, arch.dense_channels); break;
      case 4: g.conv1 = read_conv(params, layer, arch.dense_channels, arch.mid_channels); break;
      case 5: g.bn1 = read_bn(params, layer, arch.mid_channels); break;
      case 8: g.conv2 = read_conv(params, layer, arch.mid_channels, arch.last_channels); break;
      case 9: g.bn2 = read_bn(params, layer, arch.last_channels); break;
      case 11: g.conv3 = read_conv(params, layer, arch.last_channels, 1); break;
      default: break;
    }
  }
  if (!r.at_end()) throw Error("load_weights: trailing bytes after last layer");
  return g;
}

GeneratorNetwork load_weights(const std::filesystem::path& path, const GeneratorArchitecture& arch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_weights: cannot open " + path.string());
  return load_weights(in, arch);
}

}  // namespace s3pr
