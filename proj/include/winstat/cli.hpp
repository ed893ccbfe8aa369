#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "winstat/data.hpp"
#include "winstat/estimators.hpp"
#include "winstat/inference.hpp"
#include "winstat/simulation.hpp"

namespace winstat::cli {

enum class OutputFormat { table, records, both };

/// Everything `analyze` and `validate` need. Loaded from a JSON file; flags
/// override individual fields.
struct AnalysisConfig {
  std::filesystem::path input;
  ColumnSchema schema;
  std::vector<Method> methods{Method::standard, Method::ipw, Method::aipw};
  /// Model covariates by column name; default to every ingested covariate.
  std::optional<std::vector<std::string>> missingness_covariates;
  std::optional<std::vector<std::string>> outcome_covariates;
  WeightSpec weights;
  double level = 0.95;
  std::filesystem::path out = "winstat-out";
  OutputFormat format = OutputFormat::both;

  void validate() const;
};

/// Relative input paths resolve against the config file's directory.
AnalysisConfig load_analysis_config(const std::filesystem::path& path);

struct MethodResult {
  Estimate estimate;
  Inference inference;
};

struct Analysis {
  std::vector<MethodResult> results;
};

/// Maps configured covariate names to dataset indices.
ModelSpec resolve_models(const AnalysisConfig& config, const TrialDataset& data);

Analysis analyze(const AnalysisConfig& config, const TrialDataset& data);

/// Numbers in text tables use 4 significant digits.
std::string format_number(double value);

std::string report_table(const Analysis& analysis, char delimiter = ',');
std::string report_records(const Analysis& analysis);
std::string report_pretty(const Analysis& analysis, double level);

struct SimulationConfig {
  Setting setting = Setting::one;
  Variant variant = Variant::null;
  std::vector<Scenario> scenarios;
  std::vector<MethodVariant> methods;
  std::size_t replicates = 2000;
  std::size_t sample_size = 500;
  std::uint64_t seed = 1;
  double level = 0.95;
  std::filesystem::path out = "winstat-sim";
  OutputFormat format = OutputFormat::both;
};

SimulationConfig load_simulation_config(const std::filesystem::path& path);

struct SimulationRun {
  SimulationConfig config;
  std::vector<std::vector<MetricsRow>> rows;  // per scenario
};

SimulationRun simulate(const SimulationConfig& config, unsigned threads);

std::string metrics_table(const SimulationRun& run, char delimiter = ',');
std::string metrics_records(const SimulationRun& run);
std::string metrics_pretty(const SimulationRun& run);

/// Full command-line entry point. Returns 0 on success, 2 on validation
/// errors and 3 on estimation failures.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace winstat::cli
