#pragma once

// Sequential baseline: separate the mixed intensities with an L-hot code over
// a learned dictionary of measurement-domain atoms, then run phase retrieval
// on each separated intensity.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "s3pr/adam.hpp"
#include "s3pr/deep_solver.hpp"
#include "s3pr/measurement.hpp"

namespace s3pr {

struct DictionaryProvenance {
  std::string dataset;
  std::string operator_mode;
  std::uint64_t operator_seed = 0;
  std::uint64_t training_seed = 0;
};

/// m x K matrix of unit-norm atoms.
struct DictionaryModel {
  Eigen::MatrixXd atoms;
  DictionaryProvenance provenance;

  std::size_t size() const { return static_cast<std::size_t>(atoms.cols()); }
  std::size_t dim() const { return static_cast<std::size_t>(atoms.rows()); }
};

struct KsvdOptions {
  std::size_t atoms = 500;
  std::size_t sweeps = 20;
  std::size_t power_iterations = 30;
};

struct KsvdResult {
  DictionaryModel model;
  /// objective[0] after the initial assignment, then one entry per sweep.
  std::vector<double> objective;
};

/// K-SVD with one-hot codes. training holds one measurement per column.
KsvdResult learn_dictionary_ksvd(const Eigen::MatrixXd& training, const KsvdOptions& opts, RngStream& stream);

/// Sum over columns of ||y - c d||^2 with each column's best atom and
/// projection coefficient.
double one_hot_objective(const DictionaryModel& dict, const Eigen::MatrixXd& training);

struct SparseCode {
  std::vector<std::size_t> support;
  std::vector<double> coefficients;
  std::vector<double> residual_norms;  // after each selection
  bool rank_deficient = false;
};

/// Orthogonal matching pursuit with exactly `sources` selections.
SparseCode omp_lhot(const DictionaryModel& dict, std::span<const double> y, std::size_t sources);

struct PhaseRetrievalOptions {
  std::size_t iterations = 2000;
  std::size_t restarts = 5;
  AdamOptions adam{};
  /// Optional starting images, one per restart.
  std::vector<RealImage> initial;
};

struct PhaseRetrievalResult {
  RealImage estimate;
  double objective = 0.0;
  std::size_t selected_restart = 0;
  std::vector<double> restart_objectives;  // final objective per restart (inf if diverged)
  std::vector<std::vector<double>> traces;  // objective per iteration per restart
};

/// ||b - |A x|^2||^2 for real x.
double phase_retrieval_objective(const MeasurementOperator& a, std::span<const double> b, const RealImage& x);
/// -4 Re(A^H ((b - |Ax|^2) o A x)).
RealImage phase_retrieval_gradient(const MeasurementOperator& a, std::span<const double> b, const RealImage& x);

PhaseRetrievalResult phase_retrieve_gd(std::span<const double> b, const MeasurementOperator& a,
                                       const PhaseRetrievalOptions& opts, std::uint64_t seed);

struct UssPrOptions {
  PhaseRetrievalOptions phase_retrieval{};
  /// Re-estimate the coefficients on the OMP support with ADAM from a random start.
  bool refine_coefficients = false;
  std::size_t refine_iterations = 2000;
};

struct UssPrResult {
  ReconstructionResult reconstruction;
  SparseCode code;
  std::vector<std::vector<double>> intensity_estimates;
  std::vector<PhaseRetrievalResult> per_source;
};

UssPrResult solve_uss_pr(const MeasurementOperator& a, std::span<const double> y, const DictionaryModel& dict,
                         std::size_t sources, const UssPrOptions& opts, std::uint64_t seed);

/// CSV rows: iteration,restart,source,objective
void write_phase_retrieval_trace_csv(const UssPrResult& result, std::ostream& out);

// Dictionary file: "DS3PRD1\0" ; u32 version = 1 ; "DICT" ; provenance
// (str dataset, str mode, u64 operator seed, u64 training seed) ;
// u32 m ; u32 K ; f32 atoms, one atom after another. Strings are u32 length + bytes.
void save_dictionary(const DictionaryModel& dict, const std::filesystem::path& path);
void save_dictionary(const DictionaryModel& dict, std::ostream& out);
DictionaryModel load_dictionary(const std::filesystem::path& path);
DictionaryModel load_dictionary(std::istream& in);

}  // namespace s3pr
