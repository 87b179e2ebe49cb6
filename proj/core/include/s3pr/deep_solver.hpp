#pragma once

// Latent-space solver: recover L sources as G(z_1..z_L) by alternating ADAM
// steps on the latents against ||y - sum_l |A G(z_l)|^2||^2, with restarts
// and selection by smallest measurement residual.

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "s3pr/adam.hpp"
#include "s3pr/generator.hpp"
#include "s3pr/measurement.hpp"

namespace s3pr {

using Latents = std::vector<std::vector<double>>;

enum class Precondition { automatic, on, off };

struct SolverOptions {
  std::size_t iterations = 2000;
  std::size_t restarts = 5;
  double learning_rate = 0.02;
  double adam_b1 = 0.9;
  double adam_b2 = 0.999;
  double adam_eps = 1e-8;
  /// automatic: autocorrelation loss for Fourier operators, direct otherwise.
  Precondition precondition = Precondition::automatic;
  bool parallel_restarts = false;
  /// Optional starting latents, one entry per restart; missing restarts are
  /// drawn from N(0, I).
  std::vector<Latents> initial_latents;

  void validate() const;
  AdamOptions adam() const { return {learning_rate, adam_b1, adam_b2, adam_eps}; }
};

struct RestartTrace {
  std::vector<double> loss;                      // direct loss at the start of each iteration
  std::vector<std::vector<double>> grad_norms;   // per iteration, per latent
  bool diverged = false;
  std::string diagnostic;
  double residual = 0.0;                         // measurement residual of the final iterate
};

struct ReconstructionResult {
  std::vector<RealImage> estimates;
  Latents latents;
  std::vector<RestartTrace> restarts;
  std::size_t selected_restart = 0;
  double final_residual = 0.0;
};

/// ||y - sum_l |A G(z_l)|^2||^2.
double loss(const MeasurementOperator& a, std::span<const double> y, const GeneratorNetwork& g, const Latents& z);

/// Gradient of loss with respect to z_l.
std::vector<double> loss_gradient(const MeasurementOperator& a, std::span<const double> y, const GeneratorNetwork& g,
                                  const Latents& z, std::size_t l);

/// ||F^-1 y - sum_l G(z_l) * G(z_l)||^2 with autocorrelations taken on the
/// zero-padded (2 side)^2 grid. Equals (2 side)^2 times loss. Fourier only.
double autocorrelation_loss(const MeasurementOperator& a, std::span<const double> y, const GeneratorNetwork& g,
                            const Latents& z);
std::vector<double> autocorrelation_loss_gradient(const MeasurementOperator& a, std::span<const double> y,
                                                  const GeneratorNetwork& g, const Latents& z, std::size_t l);

/// Circular autocorrelation of img zero-padded to (2 rows) x (2 cols).
RealImage autocorrelation(const RealImage& img);

ReconstructionResult solve(const MeasurementOperator& a, std::span<const double> y, const GeneratorNetwork& g,
                           std::size_t sources, const SolverOptions& opts, std::uint64_t seed);

/// CSV rows: iteration,restart,loss,grad_norm_1..grad_norm_L
void write_loss_trace_csv(const ReconstructionResult& result, std::ostream& out);

}  // namespace s3pr
