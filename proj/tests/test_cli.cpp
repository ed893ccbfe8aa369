#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "winstat/cli.hpp"
#include "winstat/error.hpp"

using namespace winstat;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "winstat");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh scratch directory per test case.
fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("winstat_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Two-endpoint file with a covariate; `missing` is the chance Y1 is blank.
void write_trial(const fs::path& path, double missing, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u;
  std::normal_distribution<double> z;
  std::ofstream os(path);
  os << "id,group,y1,y2,age\n";
  for (int i = 0; i < 120; ++i) {
    const double x = z(rng);
    os << i << ',' << (i % 2 ? "trt" : "ctl") << ',';
    if (u(rng) >= missing) os << (u(rng) < 0.5 + 0.1 * (i % 2) ? 1 : 0);
    os << ',' << static_cast<int>(u(rng) * 3) << ',' << x << '\n';
  }
}

void write_config(const fs::path& path, const std::string& input, bool covariates,
                  const std::string& endpoint1 = "y1") {
  json j;
  j["input"] = input;
  j["treatment"] = {{"column", "group"}, {"treated", "trt"}, {"control", "ctl"}};
  j["endpoints"] = json::array({{{"column", endpoint1}, {"categories", 2}}, {{"column", "y2"}, {"categories", 3}}});
  if (covariates) j["covariates"] = json::array({"age"});
  j["out"] = "out";
  std::ofstream(path) << j.dump(2);
}

std::vector<json> records(const fs::path& path) {
  std::vector<json> out;
  std::istringstream in(slurp(path));
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

std::vector<json> measure_rows(const std::vector<json>& recs, const std::string& method) {
  std::vector<json> out;
  for (const json& r : recs)
    if (r["type"] == "measure" && r["method"] == method) out.push_back(r);
  return out;
}

void check_same_measures(const std::vector<json>& a, const std::vector<json>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (const char* key : {"estimate", "se", "ci_lower", "ci_upper", "p_value"})
      CHECK(a[i][key].get<double>() == doctest::Approx(b[i][key].get<double>()).epsilon(1e-10));
}

}  // namespace

TEST_CASE("format_number") {
  CHECK(cli::format_number(1.23456) == "1.235");
  CHECK(cli::format_number(0.000123456) == "0.0001235");
  CHECK(cli::format_number(std::nan("")) == "NA");
  CHECK(cli::format_number(std::numeric_limits<double>::infinity()) == "Inf");
}

TEST_CASE("analysis config loading") {
  const fs::path dir = scratch("config");
  write_trial(dir / "t.csv", 0.0);
  write_config(dir / "c.json", "t.csv", true);
  const cli::AnalysisConfig c = cli::load_analysis_config(dir / "c.json");
  CHECK(c.input == dir / "t.csv");
  CHECK(c.out == dir / "out");
  CHECK(c.schema.endpoints.size() == 2);
  CHECK(c.schema.covariates == std::vector<std::string>{"age"});
  CHECK(c.methods.size() == 3);

  json bad = json::parse(slurp(dir / "c.json"));
  bad["level"] = 1.5;
  std::ofstream(dir / "bad.json") << bad.dump();
  CHECK_THROWS_AS(cli::load_analysis_config(dir / "bad.json").validate(), Error);
  bad["level"] = 0.95;
  bad["endpoints"][1]["column"] = "y1";
  std::ofstream(dir / "dup.json") << bad.dump();
  CHECK_THROWS_AS(cli::load_analysis_config(dir / "dup.json").validate(), Error);
}

TEST_CASE("analyze: complete data gives identical standard and ipw rows") {
  const fs::path dir = scratch("complete");
  write_trial(dir / "t.csv", 0.0);
  write_config(dir / "c.json", "t.csv", true);
  const Outcome o = run_cli({"analyze", "--config", (dir / "c.json").string(), "--methods", "standard,ipw"});
  REQUIRE(o.code == 0);
  const auto recs = records(dir / "out" / "records.jsonl");
  check_same_measures(measure_rows(recs, "standard"), measure_rows(recs, "ipw"));
  CHECK(fs::exists(dir / "out" / "report.csv"));
  CHECK(slurp(dir / "out" / "report.csv").rfind("measure,method,estimate,se,ci_lower,ci_upper,p_value,scale,flag\n", 0) == 0);
}

TEST_CASE("analyze: ipw and aipw agree without covariates") {
  const fs::path dir = scratch("nocov");
  write_trial(dir / "t.csv", 0.2);
  write_config(dir / "c.json", "t.csv", false);
  const Outcome o = run_cli({"analyze", "--config", (dir / "c.json").string()});
  REQUIRE(o.code == 0);
  const auto recs = records(dir / "out" / "records.jsonl");
  check_same_measures(measure_rows(recs, "ipw"), measure_rows(recs, "aipw"));

  bool histogram = false, diagnostics = false;
  for (const json& r : recs) {
    if (r["type"] == "histogram") {
      histogram = true;
      CHECK(r["counts"].size() == 20);
    }
    diagnostics |= r["type"] == "diagnostics";
  }
  CHECK(histogram);
  CHECK(diagnostics);
}

TEST_CASE("analyze: reruns are byte-identical and tables match records") {
  const fs::path dir = scratch("rerun");
  write_trial(dir / "t.csv", 0.25, 9);
  write_config(dir / "c.json", "t.csv", true);
  const Outcome first = run_cli({"analyze", "--config", (dir / "c.json").string()});
  REQUIRE(first.code == 0);
  const std::string rec1 = slurp(dir / "out" / "records.jsonl");
  const std::string csv1 = slurp(dir / "out" / "report.csv");
  const Outcome second = run_cli({"analyze", "--config", (dir / "c.json").string()});
  REQUIRE(second.code == 0);
  CHECK(slurp(dir / "out" / "records.jsonl") == rec1);
  CHECK(slurp(dir / "out" / "report.csv") == csv1);
  CHECK(first.out == second.out);

  // Every number in the text outputs is the 4-digit rendering of a record value.
  const auto recs = records(dir / "out" / "records.jsonl");
  std::istringstream table(csv1);
  std::string line;
  std::getline(table, line);
  std::size_t row = 0;
  std::vector<json> measures;
  for (const json& r : recs)
    if (r["type"] == "measure") measures.push_back(r);
  while (std::getline(table, line)) {
    REQUIRE(row < measures.size());
    const json& r = measures[row++];
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    CHECK(cells[0] == r["measure"].get<std::string>());
    const char* keys[] = {"estimate", "se", "ci_lower", "ci_upper", "p_value"};
    for (int k = 0; k < 5; ++k) {
      const json& v = r[keys[k]];
      CHECK(cells[static_cast<std::size_t>(2 + k)] == (v.is_null() ? "NA" : cli::format_number(v.get<double>())));
      if (!v.is_null()) CHECK(first.out.find(cli::format_number(v.get<double>())) != std::string::npos);
    }
  }
  CHECK(row == measures.size());
}

TEST_CASE("validate") {
  const fs::path dir = scratch("validate");
  write_trial(dir / "t.csv", 0.2);
  write_config(dir / "c.json", "t.csv", true);
  const Outcome ok = run_cli({"validate", "--config", (dir / "c.json").string()});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("Missing (treated)") != std::string::npos);
  CHECK(ok.out.find("subjects: 120") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));

  write_config(dir / "absent.json", "t.csv", true, "vital");
  const Outcome absent = run_cli({"validate", "--config", (dir / "absent.json").string()});
  CHECK(absent.code == 2);
  CHECK(absent.err.find("vital") != std::string::npos);

  std::ofstream(dir / "empty.csv") << "group,y1,y2,age\ntrt,,1,0.1\ntrt,,2,0.2\nctl,,0,0.3\nctl,,1,0.4\n";
  write_config(dir / "empty.json", "empty.csv", false);
  const Outcome empty = run_cli({"validate", "--config", (dir / "empty.json").string()});
  CHECK(empty.code == 0);
  CHECK(empty.err.find("level-1 IPW will have no complete cases") != std::string::npos);

  const Outcome estimate_fail = run_cli({"analyze", "--config", (dir / "empty.json").string(), "--methods", "ipw"});
  CHECK(estimate_fail.code == 3);
}

TEST_CASE("argument errors exit with status 2") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"analyze", "--config", "/nonexistent.json"}).code == 2);
  CHECK(run_cli({"simulate", "--scenario", "IX", "--M", "1"}).code == 2);
  CHECK(run_cli({"simulate", "--paper-suite", "setting3"}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("simulate: smoke run and determinism") {
  const fs::path dir = scratch("simulate");
  const std::vector<std::string> args{"simulate", "--paper-suite", "setting1", "--scenario", "IV", "--M", "2",
                                      "--N", "200", "--seed", "3", "--threads", "2", "--out", (dir / "a").string()};
  const auto start = std::chrono::steady_clock::now();
  const Outcome a = run_cli(args);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  REQUIRE(a.code == 0);
  CHECK(seconds < 5.0);
  std::vector<std::string> again = args;
  again.back() = (dir / "b").string();
  again[12] = "1";
  REQUIRE(run_cli(again).code == 0);
  CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
  CHECK(slurp(dir / "a" / "metrics.jsonl") == slurp(dir / "b" / "metrics.jsonl"));
  const auto recs = records(dir / "a" / "metrics.jsonl");
  CHECK(recs.size() == 1 + 2 * 4);

  json cfg;
  cfg["setting"] = 2;
  cfg["scenarios"] = json::array({"VII", {{"id", "X"}, {"label", "custom"}, {"rates", {0.0, 0.0, 0.05, 0.25}}}});
  cfg["methods"] = json::array({"standard", "aipw-A"});
  cfg["M"] = 2;
  cfg["N"] = 200;
  cfg["out"] = "sim";
  std::ofstream(dir / "sim.json") << cfg.dump();
  const cli::SimulationConfig loaded = cli::load_simulation_config(dir / "sim.json");
  CHECK(loaded.scenarios.size() == 2);
  CHECK(loaded.methods.size() == 2);
  CHECK(loaded.methods[1].label() == "AIPW-A");
  CHECK(loaded.out == dir / "sim");
  const Outcome s = run_cli({"simulate", "--config", (dir / "sim.json").string()});
  CHECK(s.code == 0);
  CHECK(s.out.find("X. custom") != std::string::npos);
}
