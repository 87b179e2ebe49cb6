#pragma once

// Fixed DC-GAN style decoder G: R^100 -> (-1, 1)^{32x32}.
//
//   Dense(latent -> side0^2 * c0) ; Reshape(c0 x side0 x side0) ; BatchNorm(c0)
//   Upsample2x ; Conv3x3(c0 -> c1) ; BatchNorm(c1) ; LeakyReLU
//   Upsample2x ; Conv3x3(c1 -> c2) ; BatchNorm(c2) ; LeakyReLU
//   Conv3x3(c2 -> 1) ; Tanh
//
// BatchNorm always runs on its stored running statistics. The default
// architecture is (latent 100, side0 8, c0 128, c1 128, c2 64); smaller
// variants share the same layer sequence and are used for fast checks.

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "s3pr/ndcore.hpp"

namespace s3pr {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr std::size_t kLatentDim = 100;

struct GeneratorArchitecture {
  std::size_t latent_dim = kLatentDim;
  std::size_t base_side = 8;
  std::size_t dense_channels = 128;
  std::size_t mid_channels = 128;
  std::size_t last_channels = 64;

  std::size_t output_side() const { return base_side * 4; }
  friend bool operator==(const GeneratorArchitecture&, const GeneratorArchitecture&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // latent_dim x out_features
  Eigen::VectorXd bias;
};

struct BatchNormLayer {
  Eigen::VectorXd gamma, beta, running_mean, running_var;

  Eigen::ArrayXd scale() const { return gamma.array() / (running_var.array() + kBatchNormEps).sqrt(); }
};

struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  // out_channels x (in_channels * 9), columns ordered (in, ky, kx) as in an
  // (out, in, 3, 3) row-major kernel tensor.
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

struct GeneratorNetwork {
  GeneratorArchitecture arch;
  DenseLayer dense;
  BatchNormLayer bn0;
  ConvLayer conv1;
  BatchNormLayer bn1;
  ConvLayer conv2;
  BatchNormLayer bn2;
  ConvLayer conv3;

  /// Throws unless every tensor matches arch and all variances are positive.
  void validate() const;
};

/// All weights, biases and shifts zero; unit running variance and gamma.
GeneratorNetwork zero_generator(const GeneratorArchitecture& arch = {});

/// Random weights with fan-in scaling, rounded to float so the network
/// survives a save/load cycle unchanged.
GeneratorNetwork random_generator(const GeneratorArchitecture& arch, RngStream& stream);

/// Intermediate values retained for the vector-Jacobian product.
struct GeneratorTape {
  Eigen::ArrayXXd lrelu1_input;  // (16x16 pixels) x c1 for the default architecture
  Eigen::ArrayXXd lrelu2_input;
  RealImage output;
};

RealImage forward(const GeneratorNetwork& g, std::span<const double> z);
GeneratorTape forward_with_tape(const GeneratorNetwork& g, std::span<const double> z);

/// J^T cotangent, where J is the Jacobian of forward at the taped point.
std::vector<double> vjp(const GeneratorNetwork& g, const GeneratorTape& tape, const RealImage& cotangent);
std::vector<double> vjp(const GeneratorNetwork& g, std::span<const double> z, const RealImage& cotangent);

// Binary weight file, little-endian:
//   "DS3PRW1\0" ; u32 version = 1 ; u32 layer_count ;
//   per layer: u8 kind ; u32 param_count ; per param: u8 rank, u32 dims[rank], f32 data[]
// Kinds: 0 Dense, 1 BatchNorm, 2 Conv, 3 Upsample, 4 LeakyReLU, 5 Tanh, 6 Reshape.
enum class LayerKind : std::uint8_t { dense = 0, batch_norm = 1, conv = 2, upsample = 3, leaky_relu = 4, tanh = 5, reshape = 6 };

void save_weights(const GeneratorNetwork& g, const std::filesystem::path& path);
void save_weights(const GeneratorNetwork& g, std::ostream& out);
/// Loads a file and checks it against the expected architecture.
GeneratorNetwork load_weights(const std::filesystem::path& path, const GeneratorArchitecture& arch = {});
GeneratorNetwork load_weights(std::istream& in, const GeneratorArchitecture& arch = {});

}  // namespace s3pr
