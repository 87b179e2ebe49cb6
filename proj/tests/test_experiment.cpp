#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "s3pr/experiment.hpp"

using namespace s3pr;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("s3pr_exp_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

const char* kPlanted = R"(# small planted run
dataset=planted
mode=cdp
sources=1
snr=inf
method=deep
trials=2
master_seed=3
iterations=600
restarts=2
weights=random:5
generator_channels=8,8,4
)";

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults and overrides") {
    const auto c = parse_config("mode=fourier\nL=3\nsnr=inf\nlearning_rate=0.01\nprecondition=off\n");
    CHECK(c.mode == OperatorMode::fourier);
    CHECK(c.sources == 3);
    CHECK(std::isinf(c.snr));
    CHECK(c.solver.learning_rate == 0.01);
    CHECK(c.solver.precondition == Precondition::off);
    CHECK(c.solver.iterations == 2000);
    CHECK(c.solver.restarts == 5);
  }
  SUBCASE("comments and whitespace") {
    const auto c = parse_config("  # comment\n\ntrials = 4   # trailing\n");
    CHECK(c.trials == 4);
  }
  SUBCASE("generator channels") {
    const auto c = parse_config("generator_channels=16,16,8\n");
    CHECK(c.generator_arch == GeneratorArchitecture{kLatentDim, 8, 16, 16, 8});
  }
  SUBCASE("rejections") {
    CHECK_THROWS_WITH_AS(parse_config("colour=red\n"), doctest::Contains("unknown key"), Error);
    CHECK_THROWS_WITH_AS(parse_config("trials=2\ntrials=3\n"), doctest::Contains("duplicate"), Error);
    CHECK_THROWS_AS(parse_config("trials=-1\n"), Error);
    CHECK_THROWS_AS(parse_config("snr=abc\n"), Error);
    CHECK_THROWS_AS(parse_config("sources=5\n"), Error);
    CHECK_THROWS_AS(parse_config("mode=radon\n"), Error);
    CHECK_THROWS_AS(parse_config("dataset=cifar\n"), Error);
    CHECK_THROWS_AS(parse_config("just text\n"), Error);
  }
}

TEST_CASE("config hash tracks result-relevant fields only") {
  const auto a = parse_config(kPlanted);
  auto b = a;
  b.output_dir = "/somewhere/else";
  CHECK(a.hash() == b.hash());
  b.master_seed = 4;
  CHECK(a.hash() != b.hash());
  CHECK(a.hash().size() == 16);
  CHECK(parse_config(a.canonical()).hash() == a.hash());
}

TEST_CASE("environment overrides") {
  auto c = parse_config("weights=a.bin\n");
  ::setenv("S3PR_WEIGHTS", "/env/w.bin", 1);
  ::setenv("S3PR_OUTPUT_DIR", "/env/out", 1);
  apply_env_overrides(c);
  ::unsetenv("S3PR_WEIGHTS");
  ::unsetenv("S3PR_OUTPUT_DIR");
  CHECK(c.weights == "/env/w.bin");
  CHECK(c.output_dir == "/env/out");
}

TEST_CASE("image grid writer") {
  const auto dir = scratch("grid");
  SUBCASE("all -1 is black, all +1 is white") {
    emit_image_grid({{RealImage(4, 4, -1.0)}}, dir / "black.pgm");
    emit_image_grid({{RealImage(4, 4, 1.0)}}, dir / "white.pgm");
    const std::string header = "P5\n4 4\n255\n";
    CHECK(slurp(dir / "black.pgm") == header + std::string(16, '\0'));
    CHECK(slurp(dir / "white.pgm") == header + std::string(16, '\xff'));
  }
  SUBCASE("2x3 grid of 32x32 tiles is 66x100 with white gaps") {
    std::vector<std::vector<RealImage>> rows(2, std::vector<RealImage>(3, RealImage(32, 32, -1.0)));
    emit_image_grid(rows, dir / "grid.pgm");
    const auto bytes = slurp(dir / "grid.pgm");
    const std::string header = "P5\n100 66\n255\n";
    REQUIRE(bytes.size() == header.size() + 66 * 100);
    CHECK(bytes.compare(0, header.size(), header) == 0);
    const auto px = [&](std::size_t r, std::size_t c) { return static_cast<unsigned char>(bytes[header.size() + r * 100 + c]); };
    CHECK(px(0, 0) == 0);
    CHECK(px(0, 32) == 255);
    CHECK(px(0, 33) == 255);
    CHECK(px(0, 34) == 0);
    CHECK(px(32, 0) == 255);
    CHECK(px(65, 99) == 0);
  }
  SUBCASE("values clamp and round") {
    RealImage img(1, 3, std::vector<double>{-5.0, 0.0, 5.0});
    emit_image_grid({{img}}, dir / "clamp.pgm");
    const auto bytes = slurp(dir / "clamp.pgm");
    CHECK(static_cast<unsigned char>(bytes[bytes.size() - 3]) == 0);
    CHECK(static_cast<unsigned char>(bytes[bytes.size() - 2]) == 128);
    CHECK(static_cast<unsigned char>(bytes[bytes.size() - 1]) == 255);
  }
  SUBCASE("ragged grids are rejected") {
    CHECK_THROWS_AS(emit_image_grid({{RealImage(4, 4)}, {}}, dir / "bad.pgm"), Error);
    CHECK_THROWS_AS(emit_image_grid({}, dir / "bad.pgm"), Error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("aggregate uses the sample standard deviation") {
  std::vector<MetricRecord> records;
  for (double v : {1.0, 2.0, 4.0}) records.push_back({"planted", "cdp", 1, 10.0, "deep", records.size(), 0, v, 0.0, 0.0});
  records.push_back({"planted", "cdp", 1, 10.0, "uss_pr", 0, 0, 0.5, 0.0, 0.0});
  const auto rows = aggregate(records);
  REQUIRE(rows.size() == 2);
  const auto& deep = rows[0].method == "deep" ? rows[0] : rows[1];
  const auto& uss = rows[0].method == "deep" ? rows[1] : rows[0];
  CHECK(deep.trials == 3);
  CHECK(deep.mean == doctest::Approx(7.0 / 3.0));
  CHECK(deep.stddev == doctest::Approx(std::sqrt(((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) +
                                                  (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2.0)));
  CHECK(uss.trials == 1);
  CHECK(uss.stddev == 0.0);
}

TEST_CASE("report csv round-trips") {
  std::vector<MetricRecord> records{{"mnist", "fourier", 2, INFINITY, "deep", 0, 123, 0.125, 3.5, 9.0}};
  std::stringstream buf;
  write_report_csv(records, buf);
  CHECK(buf.str().rfind("dataset,mode,L,snr,method,trial,seed,resolved_nmse,residual\n", 0) == 0);
  const auto back = read_report_csv(buf);
  REQUIRE(back.size() == 1);
  CHECK(back[0].mode == "fourier");
  CHECK(std::isinf(back[0].snr));
  CHECK(back[0].seed == 123);
  CHECK(back[0].resolved_nmse == 0.125);
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(INFINITY) == "inf");
}

TEST_CASE("missing inputs fail before any trial runs") {
  const auto dir = scratch("missing");
  auto c = parse_config("dataset=planted\nmethod=deep\ntrials=1\nweights=/nonexistent/weights.bin\n");
  c.output_dir = dir;
  CHECK_THROWS_WITH_AS(run(c), doctest::Contains("generator weights not found"), Error);
  CHECK_FALSE(std::filesystem::exists(dir / c.hash() / "report.csv"));

  c.weights = "random:1";
  c.method = Method::uss_pr;
  CHECK_THROWS_WITH_AS(run(c), doctest::Contains("requires a dictionary"), Error);

  auto m = parse_config("dataset=mnist\nmethod=deep\ntrials=1\nweights=random:1\n");
  m.data_dir = dir / "empty";
  m.output_dir = dir;
  CHECK_THROWS_AS(run(m), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("planted end-to-end run is accurate and reproducible") {
  const auto dir = scratch("planted");
  auto c = parse_config(kPlanted);
  c.output_dir = dir;
  const auto report = run(c);
  REQUIRE(report.records.size() == 2);
  for (const auto& r : report.records) CHECK(r.resolved_nmse < 1e-2);

  const auto out = dir / c.hash();
  CHECK(report.output_dir == out);
  for (const char* f : {"report.csv", "timing.csv", "summary.csv", "config.txt", "traces/trial0_deep.csv", "grids/trial0.pgm"})
    CHECK_MESSAGE(std::filesystem::exists(out / f), f);
  const auto first = slurp(out / "report.csv");

  std::istringstream in(first);
  const auto parsed = read_report_csv(in);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[1].resolved_nmse == report.records[1].resolved_nmse);

  // Identical config, identical bytes.
  run(c);
  CHECK(slurp(out / "report.csv") == first);
  std::filesystem::remove_all(dir);
}
