#include "s3pr/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <set>
#include <sstream>

#include "s3pr/baseline.hpp"
#include "s3pr/datasets.hpp"
#include "s3pr/metrics.hpp"

namespace s3pr {

std::string to_string(Method method) {
  switch (method) {
    case Method::deep: return "deep";
    case Method::uss_pr: return "uss_pr";
    case Method::both: return "both";
  }
  return "unknown";
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw Error("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error("config: '" + key + "' expects true or false, got '" + v + "'");
}

Method parse_method(const std::string& v) {
  if (v == "deep") return Method::deep;
  if (v == "uss_pr") return Method::uss_pr;
  if (v == "both") return Method::both;
  throw Error("config: method must be deep, uss_pr or both, got '" + v + "'");
}

Precondition parse_precondition(const std::string& v) {
  if (v == "auto") return Precondition::automatic;
  if (v == "on") return Precondition::on;
  if (v == "off") return Precondition::off;
  throw Error("config: precondition must be auto, on or off, got '" + v + "'");
}

std::string precondition_name(Precondition p) {
  switch (p) {
    case Precondition::automatic: return "auto";
    case Precondition::on: return "on";
    case Precondition::off: return "off";
  }
  return "auto";
}

bool uses_deep(Method m) { return m == Method::deep || m == Method::both; }
bool uses_uss_pr(Method m) { return m == Method::uss_pr || m == Method::both; }

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset != "mnist" && dataset != "fashion" && dataset != "planted")
    throw Error("config: dataset must be mnist, fashion or planted");
  if (sources < 1 || sources > kMaxResolvedSources) throw Error("config: sources must be between 1 and 4");
  if (!(snr > 0)) throw Error("config: snr must be positive (or inf)");
  if (trials < 1) throw Error("config: trials must be at least 1");
  if (pr_iterations < 1 || pr_restarts < 1) throw Error("config: pr_iterations and pr_restarts must be positive");
  solver.validate();
  if (generator_arch.output_side() != kImageSide) throw Error("config: generator must produce 32x32 images");
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream out;
  out << "dataset=" << dataset << '\n'
      << "mode=" << to_string(mode) << '\n'
      << "sources=" << sources << '\n'
      << "snr=" << format_double(snr) << '\n'
      << "method=" << to_string(method) << '\n'
      << "trials=" << trials << '\n'
      << "master_seed=" << master_seed << '\n'
      << "iterations=" << solver.iterations << '\n'
      << "restarts=" << solver.restarts << '\n'
      << "learning_rate=" << format_double(solver.learning_rate) << '\n'
      << "adam_b1=" << format_double(solver.adam_b1) << '\n'
      << "adam_b2=" << format_double(solver.adam_b2) << '\n'
      << "adam_eps=" << format_double(solver.adam_eps) << '\n'
      << "precondition=" << precondition_name(solver.precondition) << '\n'
      << "pr_iterations=" << pr_iterations << '\n'
      << "pr_restarts=" << pr_restarts << '\n'
      << "refine_coefficients=" << (refine_coefficients ? "true" : "false") << '\n'
      << "redraw_operator=" << (redraw_operator ? "true" : "false") << '\n'
      << "weights=" << weights << '\n'
      << "generator_base_side=" << generator_arch.base_side << '\n'
      << "generator_channels=" << generator_arch.dense_channels << ',' << generator_arch.mid_channels << ','
      << generator_arch.last_channels << '\n'
      << "dictionary=" << dictionary.string() << '\n'
      << "data_dir=" << data_dir.string() << '\n';
  return out.str();
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw Error("config: duplicate key '" + key + "'");

    if (key == "dataset") c.dataset = v;
    else if (key == "mode") c.mode = parse_operator_mode(v);
    else if (key == "sources" || key == "L") c.sources = parse_count(key, v);
    else if (key == "snr") c.snr = parse_real(key, v);
    else if (key == "method") c.method = parse_method(v);
    else if (key == "trials") c.trials = parse_count(key, v);
    else if (key == "master_seed") c.master_seed = parse_count(key, v);
    else if (key == "iterations") c.solver.iterations = parse_count(key, v);
    else if (key == "restarts") c.solver.restarts = parse_count(key, v);
    else if (key == "learning_rate") c.solver.learning_rate = parse_real(key, v);
    else if (key == "adam_b1") c.solver.adam_b1 = parse_real(key, v);
    else if (key == "adam_b2") c.solver.adam_b2 = parse_real(key, v);
    else if (key == "adam_eps") c.solver.adam_eps = parse_real(key, v);
    else if (key == "precondition") c.solver.precondition = parse_precondition(v);
    else if (key == "parallel_restarts") c.solver.parallel_restarts = parse_bool(key, v);
    else if (key == "pr_iterations") c.pr_iterations = parse_count(key, v);
    else if (key == "pr_restarts") c.pr_restarts = parse_count(key, v);
    else if (key == "refine_coefficients") c.refine_coefficients = parse_bool(key, v);
    else if (key == "redraw_operator") c.redraw_operator = parse_bool(key, v);
    else if (key == "parallel_trials") c.parallel_trials = parse_bool(key, v);
    else if (key == "weights") c.weights = v;
    else if (key == "generator_base_side") c.generator_arch.base_side = parse_count(key, v);
    else if (key == "generator_channels") {
      std::istringstream parts(v);
      std::string a, b, d;
      if (!std::getline(parts, a, ',') || !std::getline(parts, b, ',') || !std::getline(parts, d))
        throw Error("config: generator_channels expects three comma-separated counts");
      c.generator_arch.dense_channels = parse_count(key, trim(a));
      c.generator_arch.mid_channels = parse_count(key, trim(b));
      c.generator_arch.last_channels = parse_count(key, trim(d));
    } else if (key == "dictionary") c.dictionary = v;
    else if (key == "data_dir") c.data_dir = v;
    else if (key == "output_dir") c.output_dir = v;
    else throw Error("config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void apply_env_overrides(ExperimentConfig& config) {
  if (const char* v = std::getenv("S3PR_DATA_DIR")) config.data_dir = v;
  if (const char* v = std::getenv("S3PR_WEIGHTS")) config.weights = v;
  if (const char* v = std::getenv("S3PR_DICTIONARY")) config.dictionary = v;
  if (const char* v = std::getenv("S3PR_OUTPUT_DIR")) config.output_dir = v;
}

GeneratorNetwork resolve_generator(const std::string& weights, const GeneratorArchitecture& arch) {
  const std::string prefix = "random:";
  if (weights.rfind(prefix, 0) == 0) {
    RngStream stream(parse_count("weights", weights.substr(prefix.size())));
    return random_generator(arch, stream);
  }
  if (weights.empty()) throw Error("no generator weights configured");
  if (!std::filesystem::exists(weights)) throw Error("generator weights not found: " + weights);
  return load_weights(std::filesystem::path(weights), arch);
}

std::vector<AggregateRow> aggregate(const std::vector<MetricRecord>& records) {
  std::vector<AggregateRow> rows;
  for (const std::string method : {"deep", "uss_pr"}) {
    std::vector<double> values;
    for (const auto& r : records)
      if (r.method == method) values.push_back(r.resolved_nmse);
    if (values.empty()) continue;
    AggregateRow row{method, values.size(), 0.0, 0.0};
    for (double v : values) row.mean += v;
    row.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - row.mean) * (v - row.mean);
      row.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    rows.push_back(row);
  }
  return rows;
}

void write_report_csv(const std::vector<MetricRecord>& records, std::ostream& out) {
  out << "dataset,mode,L,snr,method,trial,seed,resolved_nmse,residual\n";
  for (const auto& r : records)
    out << r.dataset << ',' << r.mode << ',' << r.sources << ',' << format_double(r.snr) << ',' << r.method << ','
        << r.trial << ',' << r.seed << ',' << format_double(r.resolved_nmse) << ',' << format_double(r.residual) << '\n';
}

std::vector<MetricRecord> read_report_csv(std::istream& in) {
  std::vector<MetricRecord> records;
  std::string line;
  if (!std::getline(in, line) || line.rfind("dataset,mode,L,snr,method", 0) != 0)
    throw Error("read_report_csv: missing or unexpected header");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::istringstream parts(line);
    std::string field;
    while (std::getline(parts, field, ',')) f.push_back(trim(field));
    if (f.size() < 9) throw Error("read_report_csv: line " + std::to_string(line_no) + " has too few fields");
    MetricRecord r;
    r.dataset = f[0];
    r.mode = f[1];
    r.sources = parse_count("L", f[2]);
    r.snr = parse_real("snr", f[3]);
    r.method = f[4];
    r.trial = parse_count("trial", f[5]);
    r.seed = parse_count("seed", f[6]);
    r.resolved_nmse = parse_real("resolved_nmse", f[7]);
    r.residual = parse_real("residual", f[8]);
    records.push_back(r);
  }
  return records;
}

std::string summary_table(const std::vector<MetricRecord>& records) {
  using Key = std::tuple<std::string, std::string, std::size_t, double, std::string>;
  std::map<Key, std::vector<MetricRecord>> groups;
  for (const auto& r : records) groups[{r.dataset, r.mode, r.sources, r.snr, r.method}].push_back(r);
  std::ostringstream out;
  out << "| dataset | mode | L | snr | method | trials | NMSE mean | NMSE std |\n";
  out << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& [key, rows] : groups) {
    const auto agg = aggregate(rows);
    for (const auto& a : agg) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%.4f | %.4f", a.mean, a.stddev);
      out << "| " << std::get<0>(key) << " | " << std::get<1>(key) << " | " << std::get<2>(key) << " | "
          << format_double(std::get<3>(key)) << " | " << a.method << " | " << a.trials << " | " << buf << " |\n";
    }
  }
  return out.str();
}

void emit_image_grid(const std::vector<std::vector<RealImage>>& rows, const std::filesystem::path& path) {
  constexpr std::size_t gap = 2;
  if (rows.empty() || rows.front().empty()) throw Error("emit_image_grid: empty grid");
  const std::size_t cols = rows.front().size();
  const std::size_t tile_h = rows.front().front().rows();
  const std::size_t tile_w = rows.front().front().cols();
  for (const auto& row : rows) {
    if (row.size() != cols) throw Error("emit_image_grid: grid is not rectangular");
    for (const auto& img : row)
      if (img.rows() != tile_h || img.cols() != tile_w) throw Error("emit_image_grid: tiles differ in size");
  }
  const std::size_t height = rows.size() * tile_h + (rows.size() - 1) * gap;
  const std::size_t width = cols * tile_w + (cols - 1) * gap;
  std::vector<unsigned char> pixels(height * width, 255);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto& img = rows[r][c];
      for (std::size_t y = 0; y < tile_h; ++y) {
        for (std::size_t x = 0; x < tile_w; ++x) {
          const double v = std::clamp((img(y, x) + 1.0) * 127.5, 0.0, 255.0);
          pixels[(r * (tile_h + gap) + y) * width + c * (tile_w + gap) + x] = static_cast<unsigned char>(std::lround(v));
        }
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("emit_image_grid: cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw Error("emit_image_grid: write failed for " + path.string());
}

namespace {

struct TrialOutput {
  std::vector<MetricRecord> records;
};

std::vector<RealImage> aligned(const std::vector<RealImage>& estimates, const Matching& m) {
  std::vector<RealImage> out;
  for (std::size_t l = 0; l < m.permutation.size(); ++l) {
    RealImage img = apply_flip(estimates[m.permutation[l]], m.flips[l]);
    if (m.signs[l] < 0)
      for (auto& v : img.values()) v = -v;
    out.push_back(std::move(img));
  }
  return out;
}

struct RunContext {
  const ExperimentConfig& config;
  std::optional<GeneratorNetwork> generator;
  std::optional<DictionaryModel> dictionary;
  std::optional<ImageDataset> dataset;
  std::filesystem::path root;
};

TrialOutput run_trial(const RunContext& ctx, std::size_t trial) {
  const auto& cfg = ctx.config;
  const std::uint64_t trial_seed = derive_seed(cfg.master_seed, trial);
  const std::size_t n = kImageSide * kImageSide;

  SourceSet truth;
  if (cfg.dataset == "planted") {
    RngStream stream(derive_seed(trial_seed, 1));
    for (std::size_t l = 0; l < cfg.sources; ++l) {
      truth.sources.push_back(forward(*ctx.generator, randn(stream, ctx.generator->arch.latent_dim)));
      truth.indices.push_back(l);
    }
  } else {
    RngStream stream(derive_seed(trial_seed, 1));
    truth = sample_mixture(*ctx.dataset, cfg.sources, stream);
  }

  std::uint64_t operator_seed = cfg.redraw_operator ? derive_seed(trial_seed, 2) : derive_seed(cfg.master_seed, 2);
  if (ctx.dictionary) operator_seed = ctx.dictionary->provenance.operator_seed;
  const MeasurementOperator a = make_operator(cfg.mode, n, operator_seed);
  const Observation obs = observe(a, truth, NoiseSpec{cfg.snr, derive_seed(trial_seed, 3)});

  TrialOutput out;
  std::vector<std::vector<RealImage>> grid{truth.sources};
  const std::string tag = "trial" + std::to_string(trial);

  auto record = [&](const std::string& method, const std::vector<RealImage>& estimates, double seconds) {
    const auto scored = resolved_nmse(estimates, truth.sources, cfg.mode);
    grid.push_back(aligned(estimates, scored.matching));
    out.records.push_back(MetricRecord{cfg.dataset, to_string(cfg.mode), cfg.sources, cfg.snr, method, trial, trial_seed,
                                       scored.value, measurement_residual(a, obs.y, estimates), seconds});
  };

  if (uses_deep(cfg.method)) {
    const auto start = std::chrono::steady_clock::now();
    const auto result = solve(a, obs.y, *ctx.generator, cfg.sources, cfg.solver, derive_seed(trial_seed, 4));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream trace(ctx.root / "traces" / (tag + "_deep.csv"));
    write_loss_trace_csv(result, trace);
    record("deep", result.estimates, seconds);
  }
  if (uses_uss_pr(cfg.method)) {
    UssPrOptions opts;
    opts.phase_retrieval.iterations = cfg.pr_iterations;
    opts.phase_retrieval.restarts = cfg.pr_restarts;
    opts.phase_retrieval.adam = cfg.solver.adam();
    opts.refine_coefficients = cfg.refine_coefficients;
    opts.refine_iterations = cfg.pr_iterations;
    const auto start = std::chrono::steady_clock::now();
    const auto result = solve_uss_pr(a, obs.y, *ctx.dictionary, cfg.sources, opts, derive_seed(trial_seed, 5));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream trace(ctx.root / "traces" / (tag + "_uss_pr.csv"));
    write_phase_retrieval_trace_csv(result, trace);
    record("uss_pr", result.reconstruction.estimates, seconds);
  }
  emit_image_grid(grid, ctx.root / "grids" / (tag + ".pgm"));
  return out;
}

}  // namespace

RunReport run(const ExperimentConfig& config) {
  config.validate();
  RunContext ctx{config, {}, {}, {}, {}};

  // Every input is resolved before the first trial.
  if (uses_deep(config.method) || config.dataset == "planted")
    ctx.generator = resolve_generator(config.weights, config.generator_arch);
  if (uses_uss_pr(config.method)) {
    if (config.dictionary.empty()) throw Error("method " + to_string(config.method) + " requires a dictionary");
    if (!std::filesystem::exists(config.dictionary)) throw Error("dictionary not found: " + config.dictionary.string());
    ctx.dictionary = load_dictionary(config.dictionary);
    if (ctx.dictionary->dim() != kOversampling * kImageSide * kImageSide)
      throw Error("dictionary atoms do not match the measurement length");
    if (ctx.dictionary->provenance.operator_mode != to_string(config.mode))
      throw Error("dictionary was trained for operator mode '" + ctx.dictionary->provenance.operator_mode + "'");
    if (ctx.dictionary->size() < config.sources) throw Error("dictionary has fewer atoms than sources");
  }
  if (config.dataset != "planted") {
    ctx.dataset = make_dataset(load_idx(locate_idx(config.data_dir, Split::test)), config.dataset, Split::test);
  }

  RunReport report;
  report.config_hash = config.hash();
  report.output_dir = config.output_dir / report.config_hash;
  ctx.root = report.output_dir;
  std::filesystem::create_directories(ctx.root / "traces");
  std::filesystem::create_directories(ctx.root / "grids");

  std::vector<TrialOutput> outputs;
  if (config.parallel_trials) {
    std::vector<std::future<TrialOutput>> futures;
    for (std::size_t t = 0; t < config.trials; ++t)
      futures.push_back(std::async(std::launch::async, run_trial, std::cref(ctx), t));
    for (auto& f : futures) outputs.push_back(f.get());
  } else {
    for (std::size_t t = 0; t < config.trials; ++t) outputs.push_back(run_trial(ctx, t));
  }
  for (auto& o : outputs)
    for (auto& r : o.records) report.records.push_back(std::move(r));
  report.aggregates = aggregate(report.records);

  {
    std::ofstream out(ctx.root / "report.csv");
    write_report_csv(report.records, out);
  }
  {
    std::ofstream out(ctx.root / "timing.csv");
    out << "trial,method,wall_time\n";
    for (const auto& r : report.records) out << r.trial << ',' << r.method << ',' << format_double(r.wall_time) << '\n';
  }
  {
    std::ofstream out(ctx.root / "summary.csv");
    out << "method,trials,mean_nmse,std_nmse\n";
    for (const auto& a : report.aggregates)
      out << a.method << ',' << a.trials << ',' << format_double(a.mean) << ',' << format_double(a.stddev) << '\n';
  }
  {
    std::ofstream out(ctx.root / "config.txt");
    out << config.canonical();
  }
  return report;
}

}  // namespace s3pr
