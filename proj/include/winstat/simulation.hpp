#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "winstat/estimators.hpp"
#include "winstat/inference.hpp"

namespace winstat {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Seed of replicate r: splitmix64(splitmix64(base) ^ (r + golden gamma)).
/// Depends only on (base, r), so results do not depend on scheduling.
std::uint64_t child_seed(std::uint64_t base, std::uint64_t replicate) noexcept;

enum class Setting { one = 1, two = 2 };
enum class Variant { null, notable };

std::string_view to_string(Variant variant);

/// Named missingness configuration. Rates are missing probabilities indexed
/// [endpoint * 2 + arm], i.e. (Y1 control, Y1 treated, Y2 control, Y2 treated).
struct Scenario {
  std::string id;
  std::string label;
  std::array<double, 4> rates{};

  double rate(int endpoint, int arm) const { return rates.at(static_cast<std::size_t>(endpoint * 2 + arm)); }
};

/// The seven configurations I..VII.
const std::vector<Scenario>& builtin_scenarios();
const Scenario& find_scenario(std::string_view id);

// --- data generation -------------------------------------------------------------

/// Population cell law of one arm in internal order (Y1, Y2) = 00, 01, 10, 11.
std::array<double, 4> setting1_law(int arm, Variant variant);

TrialDataset gen_setting1(std::size_t n, Variant variant, Rng& rng);
TrialDataset gen_setting2(std::size_t n, Rng& rng);

struct Slopes {
  double x1 = 0.0;
  double x2 = 0.0;
};

/// Missingness-model slopes for endpoint k (0-based) and arm a.
Slopes setting2_slopes(int endpoint, int arm);

/// alpha with E[expit(alpha + g1 X1 + g2 X2)] = target, X1 ~ N(0,1), X2 ~ Bern(0.5).
double calibrate_intercept(Slopes slopes, double target);

enum class Mechanism { mcar, covariate };

TrialDataset inject_missingness(const TrialDataset& data, const Scenario& scenario,
                                Mechanism mechanism, Rng& rng);

// --- population truths -----------------------------------------------------------

/// Level tables (1..K) of both arms, indexed [arm].
using PopulationCells = std::array<CellTables, 2>;

PopulationCells setting1_population(Variant variant);
/// Exact up to 64-node Gauss-Hermite quadrature over X1.
PopulationCells setting2_population();

WinTriple truth_triple_setting1(Variant variant);
WinMeasures truth_setting1(Variant variant);
WinTriple truth_triple_setting2();
WinMeasures truth_setting2();

/// Complete-data triple from n draws of the Setting II law, accumulated in
/// streaming fashion so that n may be very large.
WinTriple sampled_triple_setting2(std::size_t n, std::uint64_t seed);

/// Population expectation of the standard estimator under MCAR missingness:
/// enumerates (cell, missingness pattern) pairs of the two arms.
WinTriple expected_standard_triple(const PopulationCells& population, const Scenario& scenario);

// --- Monte Carlo ------------------------------------------------------------------

struct MethodVariant {
  Method method = Method::standard;
  /// Model specification: "" (no covariates), "A", "B" or "C".
  std::string spec;

  std::string label() const;
  ModelSpec models() const;
};

/// Standard and IPW for Setting I; Standard, IPW-A/B and AIPW-A/B/C for Setting II.
std::vector<MethodVariant> default_methods(Setting setting);

struct ScenarioSpec {
  Setting setting = Setting::one;
  Variant variant = Variant::null;
  Scenario scenario;
  std::size_t replicates = 2000;
  std::size_t sample_size = 500;
  std::uint64_t seed = 1;
  double level = 0.95;

  void validate() const;
};

struct MetricsRow {
  std::string scenario;
  std::string method;
  Measure measure = Measure::wr;
  double truth = 0.0;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  double mean = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double cp = 0.0;
  double ciw = 0.0;
  double se_mean = 0.0;  // also the Monte Carlo SE of the bias
  double se_rmse = 0.0;
  double se_cp = 0.0;
  double se_ciw = 0.0;
};

/// Bias, RMSE, CP and CIW of successful replicates against `truth`.
MetricsRow metrics(std::span<const double> estimates, std::span<const double> lower,
                   std::span<const double> upper, double truth);

WinMeasures scenario_truth(const ScenarioSpec& spec);

/// Worker count from WINSTAT_THREADS, else hardware concurrency, at least 1.
unsigned default_threads();

/// One row per (method, measure), in method then measure order.
std::vector<MetricsRow> run_monte_carlo(const ScenarioSpec& spec,
                                        const std::vector<MethodVariant>& methods,
                                        unsigned threads);

}  // namespace winstat
