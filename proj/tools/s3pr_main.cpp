// s3pr command-line workbench.
//
//   s3pr run --config exp.cfg
//   s3pr gridplot --csv out/<hash>/report.csv [--csv more.csv ...]
//   s3pr check [--seed N]
//   s3pr train-dict --config exp.cfg --out dict.bin [--atoms 500 --sweeps 20 --train-size 10000]

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "s3pr/baseline.hpp"
#include "s3pr/datasets.hpp"
#include "s3pr/experiment.hpp"
#include "s3pr/self_check.hpp"

namespace {

int cmd_run(const std::string& config_path) {
  auto config = s3pr::load_config(config_path);
  s3pr::apply_env_overrides(config);
  const auto report = s3pr::run(config);
  std::cout << "output: " << report.output_dir.string() << '\n';
  for (const auto& a : report.aggregates)
    std::printf("%-7s trials=%zu  NMSE %.4f +- %.4f\n", a.method.c_str(), a.trials, a.mean, a.stddev);
  return 0;
}

int cmd_gridplot(const std::vector<std::string>& paths) {
  std::vector<s3pr::MetricRecord> records;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw s3pr::Error("cannot open " + p);
    auto rows = s3pr::read_report_csv(in);
    records.insert(records.end(), rows.begin(), rows.end());
  }
  std::cout << s3pr::summary_table(records);
  return 0;
}

int cmd_check(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : s3pr::run_self_checks(seed)) {
    std::printf("[%s] %s  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int cmd_train_dict(const std::string& config_path, const std::string& out_path, std::size_t atoms, std::size_t sweeps,
                   std::size_t train_size, std::uint64_t seed, std::uint64_t operator_seed) {
  auto config = s3pr::load_config(config_path);
  s3pr::apply_env_overrides(config);
  const std::size_t n = s3pr::kImageSide * s3pr::kImageSide;
  const auto a = s3pr::make_operator(config.mode, n, operator_seed);

  std::vector<s3pr::RealImage> images;
  s3pr::RngStream stream(seed);
  if (config.dataset == "planted") {
    const auto g = s3pr::resolve_generator(config.weights, config.generator_arch);
    for (std::size_t i = 0; i < train_size; ++i) images.push_back(s3pr::forward(g, s3pr::randn(stream, g.arch.latent_dim)));
  } else {
    const auto ds = s3pr::make_dataset(s3pr::load_idx(s3pr::locate_idx(config.data_dir, s3pr::Split::train)),
                                       config.dataset, s3pr::Split::train);
    const auto picked = s3pr::sample_mixture(ds, std::min(train_size, ds.images.size()), stream);
    images = picked.sources;
  }

  Eigen::MatrixXd training(static_cast<Eigen::Index>(a.m()), static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto inten = a.intensity(images[i]);
    training.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(inten.data(), static_cast<Eigen::Index>(inten.size()));
  }
  s3pr::KsvdOptions opts;
  opts.atoms = atoms;
  opts.sweeps = sweeps;
  auto result = s3pr::learn_dictionary_ksvd(training, opts, stream);
  result.model.provenance = {config.dataset, s3pr::to_string(config.mode), operator_seed, seed};
  for (std::size_t s = 0; s < result.objective.size(); ++s)
    std::printf("sweep %zu objective %.6e\n", s, result.objective[s]);
  s3pr::save_dictionary(result.model, out_path);
  std::cout << "wrote " << out_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simultaneous source separation and phase retrieval workbench"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment described by a key=value config file");
  run->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);

  std::vector<std::string> csv_paths;
  auto* gridplot = app.add_subcommand("gridplot", "Summarize report.csv files as a table");
  gridplot->add_option("--csv", csv_paths, "report.csv file(s)")->required()->check(CLI::ExistingFile);

  std::uint64_t check_seed = 1;
  auto* check = app.add_subcommand("check", "Run the built-in property checks");
  check->add_option("--seed", check_seed, "Seed for the random instances");

  std::string dict_out;
  std::size_t atoms = 500, sweeps = 20, train_size = 10000;
  std::uint64_t train_seed = 0, operator_seed = 0;
  auto* train = app.add_subcommand("train-dict", "Learn a K-SVD dictionary of measurement intensities");
  train->add_option("--config", config_path, "Config file (dataset, mode, data_dir / weights)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", dict_out, "Output dictionary file")->required();
  train->add_option("--atoms", atoms, "Dictionary size");
  train->add_option("--sweeps", sweeps, "K-SVD sweeps");
  train->add_option("--train-size", train_size, "Training measurements");
  train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--operator-seed", operator_seed, "Seed of the Gaussian/CDP operator the dictionary is bound to");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path);
    if (*gridplot) return cmd_gridplot(csv_paths);
    if (*check) return cmd_check(check_seed);
    if (*train) return cmd_train_dict(config_path, dict_out, atoms, sweeps, train_size, train_seed, operator_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
