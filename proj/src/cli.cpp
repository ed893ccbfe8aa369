#include "winstat/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <set>
#include <sstream>

#include "winstat/error.hpp"

namespace winstat::cli {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(code, "cli", message); }

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::invalid_argument, "cannot open config '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::malformed_input, "config '" + path.string() + "': " + e.what());
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(Errc::malformed_input, std::string("config field '") + key + "' has the wrong type");
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

char parse_delimiter(const std::string& text) {
  if (text == "\\t" || text == "\t" || lower(text) == "tab") return '\t';
  if (text.size() != 1) fail(Errc::invalid_argument, "delimiter must be a single character or 'tab'");
  return text[0];
}

OutputFormat parse_format(const std::string& text) {
  if (text == "table") return OutputFormat::table;
  if (text == "records") return OutputFormat::records;
  if (text == "both") return OutputFormat::both;
  fail(Errc::invalid_argument, "format must be table, records or both");
}

WeightKind parse_weights(const std::string& text) {
  const std::string t = lower(text);
  if (t == "ht" || t == "horvitz-thompson") return WeightKind::horvitz_thompson;
  if (t == "hajek") return WeightKind::hajek;
  fail(Errc::invalid_argument, "weights must be ht or hajek");
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const std::string& n : names) {
    const auto m = parse_method(lower(n));
    if (!m) fail(Errc::invalid_argument, "unknown method '" + n + "' (standard, ipw, aipw)");
    if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
  }
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

MethodVariant parse_method_variant(const std::string& label) {
  const std::string t = lower(label);
  const auto dash = t.find('-');
  const auto method = parse_method(t.substr(0, dash));
  if (!method) fail(Errc::invalid_argument, "unknown method '" + label + "'");
  MethodVariant v{*method, ""};
  if (dash != std::string::npos) {
    v.spec = t.substr(dash + 1);
    std::transform(v.spec.begin(), v.spec.end(), v.spec.begin(), [](unsigned char c) { return std::toupper(c); });
    v.models();  // validates
  }
  return v;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::invalid_argument, "cannot write '" + path.string() + "'");
  out << text;
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

std::string level_label(double level) {
  std::ostringstream os;
  os << format_number(100.0 * level) << "% CI";
  return os.str();
}

}  // namespace

// --- analysis config -------------------------------------------------------------

void AnalysisConfig::validate() const {
  if (schema.treatment.empty()) fail(Errc::invalid_argument, "treatment column not configured");
  if (schema.endpoints.empty()) fail(Errc::invalid_argument, "at least one endpoint column required");
  std::set<std::string> seen{schema.treatment};
  for (const EndpointColumn& e : schema.endpoints) {
    if (!seen.insert(e.column).second)
      fail(Errc::invalid_argument, "column '" + e.column + "' used more than once");
    if (e.categories < 2) fail(Errc::invalid_argument, "endpoint '" + e.column + "' needs at least 2 categories");
  }
  for (const std::string& c : schema.covariates)
    if (!seen.insert(c).second) fail(Errc::invalid_argument, "column '" + c + "' used more than once");
  for (const auto* list : {&missingness_covariates, &outcome_covariates}) {
    if (!*list) continue;
    for (const std::string& c : **list)
      if (std::find(schema.covariates.begin(), schema.covariates.end(), c) == schema.covariates.end())
        fail(Errc::invalid_argument, "model covariate '" + c + "' is not among the configured covariates");
  }
  if (methods.empty()) fail(Errc::invalid_argument, "no methods requested");
  if (!(level > 0.5 && level < 1.0)) fail(Errc::invalid_argument, "confidence level must lie in (0.5, 1)");
  weights.validate();
}

AnalysisConfig load_analysis_config(const std::filesystem::path& path) {
  const json j = read_json(path);
  AnalysisConfig c;
  if (j.contains("input")) {
    c.input = get_or<std::string>(j, "input", "");
    if (c.input.is_relative()) c.input = path.parent_path() / c.input;
  }
  c.schema.delimiter = parse_delimiter(get_or<std::string>(j, "delimiter", ","));
  c.schema.missing = get_or<std::string>(j, "missing", "NA");
  if (j.contains("treatment")) {
    const json& t = j.at("treatment");
    if (t.is_string()) {
      c.schema.treatment = t.get<std::string>();
    } else {
      c.schema.treatment = get_or<std::string>(t, "column", "");
      c.schema.treated_value = get_or<std::string>(t, "treated", "1");
      c.schema.control_value = get_or<std::string>(t, "control", "0");
    }
  }
  for (const json& e : get_or<json>(j, "endpoints", json::array())) {
    EndpointColumn col;
    col.column = get_or<std::string>(e, "column", "");
    col.categories = get_or<int>(e, "categories", 2);
    col.lowest = get_or<int>(e, "lowest", 0);
    const std::string dir = lower(get_or<std::string>(e, "direction", "larger_better"));
    if (dir == "larger_better" || dir == "larger") {
      col.direction = Direction::larger_better;
    } else if (dir == "smaller_better" || dir == "smaller") {
      col.direction = Direction::smaller_better;
    } else {
      fail(Errc::invalid_argument, "direction must be larger_better or smaller_better");
    }
    c.schema.endpoints.push_back(col);
  }
  c.schema.covariates = get_or<std::vector<std::string>>(j, "covariates", {});
  if (j.contains("missingness_covariates"))
    c.missingness_covariates = get_or<std::vector<std::string>>(j, "missingness_covariates", {});
  if (j.contains("outcome_covariates"))
    c.outcome_covariates = get_or<std::vector<std::string>>(j, "outcome_covariates", {});
  if (j.contains("methods")) c.methods = parse_methods(get_or<std::vector<std::string>>(j, "methods", {}));
  c.weights.kind = parse_weights(get_or<std::string>(j, "weights", "ht"));
  if (j.contains("truncate_pi")) c.weights.truncation = get_or<double>(j, "truncate_pi", 0.01);
  c.level = get_or<double>(j, "level", 0.95);
  if (j.contains("out")) {
    c.out = get_or<std::string>(j, "out", "");
    if (c.out.is_relative()) c.out = path.parent_path() / c.out;
  }
  c.format = parse_format(get_or<std::string>(j, "format", "both"));
  return c;
}

ModelSpec resolve_models(const AnalysisConfig& config, const TrialDataset& data) {
  auto resolve = [&](const std::optional<std::vector<std::string>>& names) {
    CovariateSelector sel;
    if (!names) {
      for (std::size_t j = 0; j < data.covariate_count(); ++j) sel.push_back(j);
    } else {
      for (const std::string& n : *names) sel.push_back(data.covariate_index(n));
    }
    return sel;
  };
  return {resolve(config.missingness_covariates), resolve(config.outcome_covariates)};
}

Analysis analyze(const AnalysisConfig& config, const TrialDataset& data) {
  config.validate();
  const ModelSpec models = resolve_models(config, data);
  Analysis a;
  for (Method m : config.methods) {
    WeightSpec w = config.weights;
    if (m != Method::ipw) w.kind = WeightKind::horvitz_thompson;
    MethodResult r;
    r.estimate = estimate(data, m, models, w);
    r.inference = infer(data, r.estimate, config.level);
    a.results.push_back(std::move(r));
  }
  return a;
}

// --- rendering ---------------------------------------------------------------------

std::string format_number(double value) {
  if (std::isnan(value)) return "NA";
  if (std::isinf(value)) return value > 0 ? "Inf" : "-Inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", value);
  return buf;
}

std::string report_table(const Analysis& analysis, char d) {
  std::ostringstream os;
  os << "measure" << d << "method" << d << "estimate" << d << "se" << d << "ci_lower" << d << "ci_upper"
     << d << "p_value" << d << "scale" << d << "flag\n";
  for (const MethodResult& r : analysis.results)
    for (const MeasureReport& m : r.inference.reports)
      os << to_string(m.measure) << d << m.method << d << format_number(m.estimate) << d
         << format_number(m.se) << d << format_number(m.lower) << d << format_number(m.upper) << d
         << format_number(m.p_value) << d << (m.log_scale ? "log" : "identity") << d << m.flag << '\n';
  return os.str();
}

std::string report_records(const Analysis& analysis) {
  std::ostringstream os;
  for (const MethodResult& r : analysis.results) {
    const std::string method(to_string(r.estimate.method));
    const char* weights = r.estimate.weights == WeightKind::hajek ? "hajek" : "ht";
    for (const MeasureReport& m : r.inference.reports) {
      json j;
      j["type"] = "measure";
      j["method"] = method;
      j["weights"] = weights;
      j["measure"] = std::string(to_string(m.measure));
      j["estimate"] = number(m.estimate);
      j["se"] = number(m.se);
      j["ci_lower"] = number(m.lower);
      j["ci_upper"] = number(m.upper);
      j["p_value"] = number(m.p_value);
      j["scale"] = m.log_scale ? "log" : "identity";
      j["flag"] = m.flag;
      os << j.dump() << '\n';
    }
    json t;
    t["type"] = "triple";
    t["method"] = method;
    t["p_win"] = number(r.estimate.triple.win);
    t["p_loss"] = number(r.estimate.triple.loss);
    t["p_tie"] = number(r.estimate.triple.tie);
    if (r.inference.has_variance) {
      json cov = json::array();
      for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) cov.push_back(number(r.inference.covariance(i, k)));
      t["covariance"] = cov;
    }
    os << t.dump() << '\n';
    for (int a = 0; a < 2; ++a) {
      for (const CellTable& c : r.estimate.cells[static_cast<std::size_t>(a)]) {
        json j;
        j["type"] = "cells";
        j["method"] = method;
        j["arm"] = c.arm;
        j["level"] = c.level;
        j["supports"] = c.supports;
        json probs = json::array();
        for (double p : c.probs) probs.push_back(number(p));
        j["probs"] = probs;
        os << j.dump() << '\n';
      }
    }
    json diag;
    diag["type"] = "diagnostics";
    diag["method"] = method;
    diag["warnings"] = r.estimate.diagnostics.warnings;
    json props = json::array();
    for (const PropensitySummary& s : r.estimate.diagnostics.propensity) {
      json p;
      p["arm"] = s.arm;
      p["level"] = s.level;
      p["modeled"] = s.modeled;
      p["min_pi"] = number(s.min_pi);
      p["max_pi"] = number(s.max_pi);
      p["below_threshold"] = s.below_threshold;
      p["weight_normalizer"] = number(s.normalizer);
      props.push_back(p);
    }
    diag["propensity"] = props;
    os << diag.dump() << '\n';
    for (const PropensitySummary& s : r.estimate.diagnostics.propensity) {
      json h;
      h["type"] = "histogram";
      h["method"] = method;
      h["arm"] = s.arm;
      h["level"] = s.level;
      h["lower"] = 0.0;
      h["upper"] = 1.0;
      h["counts"] = s.histogram;
      os << h.dump() << '\n';
    }
  }
  return os.str();
}

std::string report_pretty(const Analysis& analysis, double level) {
  std::ostringstream os;
  os << pad("Measure", 9) << pad("Method", 10) << pad("Estimate", 10) << pad("SE", 10)
     << pad(level_label(level), 22) << pad("p-value", 10) << "Note\n";
  for (const MethodResult& r : analysis.results) {
    for (const MeasureReport& m : r.inference.reports) {
      const std::string ci = "(" + format_number(m.lower) + ", " + format_number(m.upper) + ")";
      std::string note = m.log_scale ? "log-scale SE" : "";
      if (!m.flag.empty()) note += (note.empty() ? "" : "; ") + m.flag;
      os << pad(std::string(to_string(m.measure)), 9) << pad(m.method, 10)
         << pad(format_number(m.estimate), 10) << pad(format_number(m.se), 10) << pad(ci, 22)
         << pad(format_number(m.p_value), 10) << note << '\n';
    }
  }
  return os.str();
}

// --- simulation ----------------------------------------------------------------------

SimulationConfig load_simulation_config(const std::filesystem::path& path) {
  const json j = read_json(path);
  SimulationConfig c;
  const int setting = get_or<int>(j, "setting", 1);
  if (setting != 1 && setting != 2) fail(Errc::invalid_argument, "setting must be 1 or 2");
  c.setting = setting == 1 ? Setting::one : Setting::two;
  const std::string variant = get_or<std::string>(j, "variant", "null");
  if (variant != "null" && variant != "notable") fail(Errc::invalid_argument, "variant must be null or notable");
  c.variant = variant == "null" ? Variant::null : Variant::notable;
  for (const json& s : get_or<json>(j, "scenarios", json::array())) {
    if (s.is_string()) {
      c.scenarios.push_back(find_scenario(s.get<std::string>()));
    } else {
      Scenario sc;
      sc.id = get_or<std::string>(s, "id", "custom");
      sc.label = get_or<std::string>(s, "label", sc.id);
      const auto rates = get_or<std::vector<double>>(s, "rates", {});
      if (rates.size() != 4)
        fail(Errc::invalid_argument, "scenario rates need 4 entries (Y1 control, Y1 treated, Y2 control, Y2 treated)");
      std::copy(rates.begin(), rates.end(), sc.rates.begin());
      c.scenarios.push_back(sc);
    }
  }
  for (const std::string& m : get_or<std::vector<std::string>>(j, "methods", {}))
    c.methods.push_back(parse_method_variant(m));
  c.replicates = get_or<std::size_t>(j, "M", c.replicates);
  c.sample_size = get_or<std::size_t>(j, "N", c.sample_size);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.level = get_or<double>(j, "level", c.level);
  if (j.contains("out")) {
    c.out = get_or<std::string>(j, "out", "");
    if (c.out.is_relative()) c.out = path.parent_path() / c.out;
  }
  c.format = parse_format(get_or<std::string>(j, "format", "both"));
  return c;
}

SimulationRun simulate(const SimulationConfig& config, unsigned threads) {
  if (config.scenarios.empty()) fail(Errc::invalid_argument, "no scenarios selected");
  SimulationRun run;
  run.config = config;
  if (run.config.methods.empty()) run.config.methods = default_methods(config.setting);
  for (const MethodVariant& m : run.config.methods)
    if (config.setting == Setting::one && !m.spec.empty())
      fail(Errc::invalid_argument, "setting 1 has no covariates; model specifications do not apply");
  for (const Scenario& s : config.scenarios) {
    ScenarioSpec spec;
    spec.setting = config.setting;
    spec.variant = config.variant;
    spec.scenario = s;
    spec.replicates = config.replicates;
    spec.sample_size = config.sample_size;
    spec.seed = config.seed;
    spec.level = config.level;
    run.rows.push_back(run_monte_carlo(spec, run.config.methods, threads));
  }
  return run;
}

std::string metrics_table(const SimulationRun& run, char d) {
  std::ostringstream os;
  os << "scenario" << d << "method" << d << "measure" << d << "truth" << d << "mean" << d << "bias" << d
     << "rmse" << d << "cp" << d << "ciw" << d << "se_bias" << d << "se_rmse" << d << "se_cp" << d
     << "se_ciw" << d << "replicates" << d << "failures\n";
  for (const auto& rows : run.rows)
    for (const MetricsRow& r : rows)
      os << r.scenario << d << r.method << d << to_string(r.measure) << d << format_number(r.truth) << d
         << format_number(r.mean) << d << format_number(r.bias) << d << format_number(r.rmse) << d
         << format_number(r.cp) << d << format_number(r.ciw) << d << format_number(r.se_mean) << d
         << format_number(r.se_rmse) << d << format_number(r.se_cp) << d << format_number(r.se_ciw)
         << d << r.replicates << d << r.failures << '\n';
  return os.str();
}

std::string metrics_records(const SimulationRun& run) {
  std::ostringstream os;
  const SimulationConfig& c = run.config;
  for (std::size_t s = 0; s < c.scenarios.size(); ++s) {
    json h;
    h["type"] = "scenario";
    h["setting"] = static_cast<int>(c.setting);
    h["variant"] = std::string(to_string(c.variant));
    h["id"] = c.scenarios[s].id;
    h["label"] = c.scenarios[s].label;
    h["rates"] = c.scenarios[s].rates;
    h["M"] = c.replicates;
    h["N"] = c.sample_size;
    h["seed"] = c.seed;
    h["level"] = c.level;
    os << h.dump() << '\n';
    for (const MetricsRow& r : run.rows[s]) {
      json j;
      j["type"] = "metrics";
      j["scenario"] = r.scenario;
      j["method"] = r.method;
      j["measure"] = std::string(to_string(r.measure));
      j["truth"] = number(r.truth);
      j["mean"] = number(r.mean);
      j["bias"] = number(r.bias);
      j["rmse"] = number(r.rmse);
      j["cp"] = number(r.cp);
      j["ciw"] = number(r.ciw);
      j["se_bias"] = number(r.se_mean);
      j["se_rmse"] = number(r.se_rmse);
      j["se_cp"] = number(r.se_cp);
      j["se_ciw"] = number(r.se_ciw);
      j["replicates"] = r.replicates;
      j["failures"] = r.failures;
      os << j.dump() << '\n';
    }
  }
  return os.str();
}

std::string metrics_pretty(const SimulationRun& run) {
  std::ostringstream os;
  const SimulationConfig& c = run.config;
  os << "Setting " << static_cast<int>(c.setting)
     << (c.setting == Setting::one ? std::string(", ") + std::string(to_string(c.variant)) + " effect" : "")
     << ", M = " << c.replicates << ", N = " << c.sample_size << ", seed = " << c.seed << '\n';
  for (std::size_t s = 0; s < c.scenarios.size(); ++s) {
    os << '\n' << c.scenarios[s].id << ". " << c.scenarios[s].label << '\n';
    os << "  " << pad("Measure", 8) << pad("Method", 9) << pad("Truth", 9) << pad("Est.", 9)
       << pad("Bias", 9) << pad("RMSE", 9) << pad("CP", 9) << pad("CIW", 9) << "Failed\n";
    for (const MetricsRow& r : run.rows[s])
      os << "  " << pad(std::string(to_string(r.measure)), 8) << pad(r.method, 9)
         << pad(format_number(r.truth), 9) << pad(format_number(r.mean), 9)
         << pad(format_number(r.bias), 9) << pad(format_number(r.rmse), 9)
         << pad(format_number(r.cp), 9) << pad(format_number(r.ciw), 9) << r.failures << '\n';
  }
  return os.str();
}

// --- commands ------------------------------------------------------------------------

namespace {

struct AnalyzeFlags {
  std::string config;
  std::string input;
  std::string methods;
  std::string weights;
  std::optional<double> truncate;
  std::optional<double> level;
  std::string out;
  std::string format;
};

AnalysisConfig build_analysis_config(const AnalyzeFlags& f) {
  if (f.config.empty()) fail(Errc::invalid_argument, "--config is required (it holds the column schema)");
  AnalysisConfig c = load_analysis_config(f.config);
  if (!f.input.empty()) c.input = f.input;
  if (!f.methods.empty()) c.methods = parse_methods(split_list(f.methods));
  if (!f.weights.empty()) c.weights.kind = parse_weights(f.weights);
  if (f.truncate) c.weights.truncation = f.truncate;
  if (f.level) c.level = *f.level;
  if (!f.out.empty()) c.out = f.out;
  if (!f.format.empty()) c.format = parse_format(f.format);
  if (c.input.empty()) fail(Errc::invalid_argument, "no input file configured");
  c.validate();
  return c;
}

int cmd_analyze(const AnalyzeFlags& f, std::ostream& out, std::ostream& err) {
  const AnalysisConfig c = build_analysis_config(f);
  const TrialDataset data = ingest_dataset(c.input, c.schema);
  const Analysis a = analyze(c, data);
  std::filesystem::create_directories(c.out);
  if (c.format != OutputFormat::records) write_file(c.out / "report.csv", report_table(a));
  if (c.format != OutputFormat::table) write_file(c.out / "records.jsonl", report_records(a));
  out << report_pretty(a, c.level);
  std::set<std::string> shown;
  for (const MethodResult& r : a.results)
    for (const std::string& w : r.estimate.diagnostics.warnings)
      if (shown.insert(w).second) err << "warning: " << w << '\n';
  return 0;
}

int cmd_validate(const AnalyzeFlags& f, std::ostream& out, std::ostream& err) {
  const AnalysisConfig c = build_analysis_config(f);
  const TrialDataset data = ingest_dataset(c.input, c.schema);
  const ModelSpec models = resolve_models(c, data);
  const Hierarchy& h = data.hierarchy();
  const int K = h.endpoints();
  out << "subjects: " << data.size() << " (treated " << data.arm_size(1) << ", control "
      << data.arm_size(0) << ")\n";
  out << pad("Endpoint", 12) << pad("Missing (treated)", 20) << "Missing (control)\n";
  for (int k = 0; k < K; ++k) {
    std::size_t miss[2] = {0, 0};
    for (const Subject& s : data.subjects())
      if (!s.observed(k)) ++miss[s.arm];
    auto cell = [&](int a) {
      return std::to_string(miss[a]) + " (" + format_number(100.0 * static_cast<double>(miss[a]) / static_cast<double>(data.arm_size(a))) + "%)";
    };
    out << pad(c.schema.endpoints[static_cast<std::size_t>(k)].column, 12) << pad(cell(1), 20) << cell(0) << '\n';
  }
  int findings = 0;
  out << pad("Level", 7) << pad("Complete (treated)", 20) << "Complete (control)\n";
  for (int k = 1; k <= K; ++k) {
    std::size_t complete[2] = {0, 0};
    for (const Subject& s : data.subjects())
      if (joint_nonmiss(s, k)) ++complete[s.arm];
    out << pad(std::to_string(k), 7) << pad(std::to_string(complete[1]), 20) << complete[0] << '\n';
    for (int a = 0; a < 2; ++a) {
      if (complete[a] == 0)
        err << "warning: level-" << k << " IPW will have no complete cases in the "
            << (a == 1 ? "treated" : "control") << " arm\n";
      // design construction for the missingness model
      const std::size_t p = models.missingness.size() + 1;
      Eigen::MatrixXd X(static_cast<Eigen::Index>(data.arm_size(a)), static_cast<Eigen::Index>(p));
      Eigen::Index row = 0;
      for (const Subject& s : data.subjects())
        if (s.arm == a) X.row(row++) = design_row(s, models.missingness).transpose();
      if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(X).rank() < static_cast<Eigen::Index>(p)) {
        err << "error: missingness design is rank deficient in the " << (a == 1 ? "treated" : "control")
            << " arm\n";
        ++findings;
      }
    }
  }
  for (const std::string& w : h.warnings()) err << "warning: " << w << '\n';
  return findings == 0 ? 0 : 2;
}

struct SimulateFlags {
  std::string config;
  std::string suite;
  std::string variant;
  std::vector<std::string> scenarios;
  std::string methods;
  std::string model_spec;
  std::optional<std::size_t> M;
  std::optional<std::size_t> N;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<double> level;
  std::string out;
  std::string format;
};

int cmd_simulate(const SimulateFlags& f, std::ostream& out, std::ostream&) {
  SimulationConfig c;
  if (!f.config.empty()) c = load_simulation_config(f.config);
  if (!f.suite.empty()) {
    if (f.suite == "setting1") {
      c.setting = Setting::one;
    } else if (f.suite == "setting2") {
      c.setting = Setting::two;
    } else {
      fail(Errc::invalid_argument, "--paper-suite must be setting1 or setting2");
    }
    c.scenarios = builtin_scenarios();
    c.methods.clear();
  }
  if (!f.scenarios.empty()) {
    c.scenarios.clear();
    for (const std::string& id : f.scenarios) c.scenarios.push_back(find_scenario(id));
  }
  if (c.scenarios.empty())
    fail(Errc::invalid_argument, "select scenarios with --paper-suite, --scenario or --config");
  if (!f.variant.empty()) {
    if (f.variant != "null" && f.variant != "notable")
      fail(Errc::invalid_argument, "--variant must be null or notable");
    c.variant = f.variant == "null" ? Variant::null : Variant::notable;
  }
  if (c.methods.empty()) c.methods = default_methods(c.setting);
  if (!f.model_spec.empty()) {
    if (f.model_spec != "A" && f.model_spec != "B" && f.model_spec != "C")
      fail(Errc::invalid_argument, "--model-spec must be A, B or C");
    std::erase_if(c.methods, [&](const MethodVariant& m) { return !m.spec.empty() && m.spec != f.model_spec; });
  }
  if (!f.methods.empty()) {
    const std::vector<Method> keep = parse_methods(split_list(f.methods));
    std::erase_if(c.methods, [&](const MethodVariant& m) {
      return std::find(keep.begin(), keep.end(), m.method) == keep.end();
    });
  }
  if (c.methods.empty()) fail(Errc::invalid_argument, "method filters removed every method");
  if (f.M) c.replicates = *f.M;
  if (f.N) c.sample_size = *f.N;
  if (f.seed) c.seed = *f.seed;
  if (f.level) c.level = *f.level;
  if (!f.out.empty()) c.out = f.out;
  if (!f.format.empty()) c.format = parse_format(f.format);

  const SimulationRun run = simulate(c, f.threads.value_or(default_threads()));
  std::filesystem::create_directories(c.out);
  if (c.format != OutputFormat::records) write_file(c.out / "metrics.csv", metrics_table(run));
  if (c.format != OutputFormat::table) write_file(c.out / "metrics.jsonl", metrics_records(run));
  out << metrics_pretty(run);
  return 0;
}

void add_analysis_flags(CLI::App* cmd, AnalyzeFlags& f) {
  cmd->add_option("--config", f.config, "JSON analysis configuration")->check(CLI::ExistingFile);
  cmd->add_option("--input", f.input, "Delimited data file (overrides the config)");
  cmd->add_option("--methods", f.methods, "Comma-separated subset of standard,ipw,aipw");
  cmd->add_option("--weights", f.weights, "ht or hajek (IPW point estimates only)");
  cmd->add_option("--truncate-pi", f.truncate, "Flag fitted propensities below this value");
  cmd->add_option("--level", f.level, "Confidence level");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--format", f.format, "table, records or both");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Win statistics for hierarchical ordinal endpoints with missing data", "winstat"};
  app.require_subcommand(1);

  AnalyzeFlags analyze_flags;
  AnalyzeFlags validate_flags;
  SimulateFlags sim;
  auto* analyze_cmd = app.add_subcommand("analyze", "Estimate win measures for a trial data file");
  add_analysis_flags(analyze_cmd, analyze_flags);
  auto* validate_cmd = app.add_subcommand("validate", "Check a configuration and data file without estimating");
  add_analysis_flags(validate_cmd, validate_flags);
  auto* simulate_cmd = app.add_subcommand("simulate", "Run Monte Carlo simulation scenarios");
  simulate_cmd->add_option("--config", sim.config, "JSON simulation configuration")->check(CLI::ExistingFile);
  simulate_cmd->add_option("--paper-suite", sim.suite, "setting1 or setting2: all seven scenarios");
  simulate_cmd->add_option("--scenario", sim.scenarios, "Scenario id (I..VII), repeatable");
  simulate_cmd->add_option("--variant", sim.variant, "Treatment effect for setting 1: null or notable");
  simulate_cmd->add_option("--methods", sim.methods, "Comma-separated subset of standard,ipw,aipw");
  simulate_cmd->add_option("--model-spec", sim.model_spec, "Keep only model specification A, B or C");
  simulate_cmd->add_option("--M", sim.M, "Replicates per scenario");
  simulate_cmd->add_option("--N", sim.N, "Subjects per replicate");
  simulate_cmd->add_option("--seed", sim.seed, "Base seed");
  simulate_cmd->add_option("--threads", sim.threads, "Worker threads (default: WINSTAT_THREADS or all cores)");
  simulate_cmd->add_option("--level", sim.level, "Confidence level");
  simulate_cmd->add_option("--out", sim.out, "Output directory");
  simulate_cmd->add_option("--format", sim.format, "table, records or both");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (analyze_cmd->parsed()) return cmd_analyze(analyze_flags, out, err);
    if (validate_cmd->parsed()) return cmd_validate(validate_flags, out, err);
    return cmd_simulate(sim, out, err);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "] " << e.what() << '\n';
    return e.kind() == ErrorKind::validation ? 2 : 3;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace winstat::cli
