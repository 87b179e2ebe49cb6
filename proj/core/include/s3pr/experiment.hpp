#pragma once

// Config-driven experiment harness: sample mixtures, measure, run the
// selected solvers, score and write report / trace / image-grid outputs.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s3pr/deep_solver.hpp"
#include "s3pr/generator.hpp"
#include "s3pr/measurement.hpp"

namespace s3pr {

enum class Method { deep, uss_pr, both };

std::string to_string(Method method);

struct ExperimentConfig {
  std::string dataset = "mnist";  // mnist | fashion | planted
  OperatorMode mode = OperatorMode::gaussian;
  std::size_t sources = 2;
  double snr = 50.0;  // infinity disables noise
  Method method = Method::both;
  std::size_t trials = 10;
  std::uint64_t master_seed = 0;
  SolverOptions solver{};
  std::size_t pr_iterations = 2000;
  std::size_t pr_restarts = 5;
  bool refine_coefficients = false;
  bool redraw_operator = true;
  bool parallel_trials = false;

  /// Weight file, or "random:<seed>" for a random-weight network.
  std::string weights;
  GeneratorArchitecture generator_arch{};
  std::filesystem::path dictionary;
  std::filesystem::path data_dir;
  std::filesystem::path output_dir = "out";

  void validate() const;
  /// Canonical key=value text of every field that influences results.
  std::string canonical() const;
  std::string hash() const;
};

/// Flat key=value text; '#' starts a comment. Unknown keys and out-of-range
/// values are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// S3PR_DATA_DIR, S3PR_WEIGHTS, S3PR_DICTIONARY and S3PR_OUTPUT_DIR override
/// the matching config entries when set.
void apply_env_overrides(ExperimentConfig& config);

struct MetricRecord {
  std::string dataset;
  std::string mode;
  std::size_t sources = 0;
  double snr = 0.0;
  std::string method;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double resolved_nmse = 0.0;
  double residual = 0.0;
  double wall_time = 0.0;
};

struct AggregateRow {
  std::string method;
  std::size_t trials = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single trial
};

struct RunReport {
  std::vector<MetricRecord> records;
  std::vector<AggregateRow> aggregates;
  std::string config_hash;
  std::filesystem::path output_dir;  // out/<config-hash>
};

std::vector<AggregateRow> aggregate(const std::vector<MetricRecord>& records);

/// Runs every trial and writes output_dir/<hash>/{report.csv, timing.csv,
/// summary.csv, config.txt, traces/, grids/}.
RunReport run(const ExperimentConfig& config);

GeneratorNetwork resolve_generator(const std::string& weights, const GeneratorArchitecture& arch);

/// report.csv columns: dataset,mode,L,snr,method,trial,seed,resolved_nmse,residual
void write_report_csv(const std::vector<MetricRecord>& records, std::ostream& out);
std::vector<MetricRecord> read_report_csv(std::istream& in);
/// Mean and standard deviation grouped by (dataset, mode, L, snr, method).
std::string summary_table(const std::vector<MetricRecord>& records);

/// Binary PGM (P5, maxval 255); [-1, 1] maps to [0, 255]; 2-pixel white
/// separators between tiles. Every row must hold the same number of images.
void emit_image_grid(const std::vector<std::vector<RealImage>>& rows, const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace s3pr
