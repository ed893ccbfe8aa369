#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "winstat/data.hpp"
#include "winstat/glm.hpp"

namespace winstat {

enum class Method { standard, ipw, aipw };
enum class WeightKind { horvitz_thompson, hajek };

std::string_view to_string(Method method);
std::optional<Method> parse_method(std::string_view text);

struct WeightSpec {
  WeightKind kind = WeightKind::horvitz_thompson;
  /// Propensities below this are flagged (never truncated). Must lie in (0, 0.5).
  std::optional<double> truncation;

  double flag_threshold() const { return truncation.value_or(0.01); }
  void validate() const;
};

struct WinMeasures {
  double wr = 1.0;
  double wo = 1.0;
  double nb = 0.0;
  double door = 0.5;
  bool wr_finite = true;
  bool wo_finite = true;
};

WinMeasures win_measures(const WinTriple& triple);

/// Cell tables for levels 1..K of one arm, index 0 holding level 1.
using CellTables = std::vector<CellTable>;

/// p_W, p_L over hierarchical comparisons of two arms' joint cell laws.
WinTriple assemble_triple(const CellTables& treated, const CellTables& control);

// --- standard pairwise comparison ---------------------------------------------

/// Distinct outcome patterns (missing coded -1) with per-arm subject counts.
struct PatternTable {
  std::vector<std::vector<int>> patterns;
  std::vector<std::array<std::uint64_t, 2>> counts;  // [control, treated]
  std::vector<std::size_t> subject_pattern;          // per dataset subject
};

PatternTable outcome_patterns(const TrialDataset& data);

/// +1 if the treated pattern wins, -1 if it loses, 0 for a tie. A level where
/// either value is missing is tied and the walk moves to the next level.
int compare_patterns(std::span<const int> treated, std::span<const int> control);

struct PairwiseResult {
  WinTriple triple;
  WinMeasures measures;
  std::uint64_t wins = 0;
  std::uint64_t losses = 0;
  std::uint64_t pairs = 0;
};

PairwiseResult standard_pairwise(const TrialDataset& data);

// --- weighting ------------------------------------------------------------------

/// Non-missingness propensity for one (arm, level). When every arm subject is
/// observed through the level there is nothing to model and pi is taken as 1.
struct Propensity {
  int arm = 0;
  int level = 1;
  std::optional<LogisticFit> fit;

  double pi(const Subject& subject) const;
  bool modeled() const { return fit.has_value(); }
};

Propensity fit_propensity(const TrialDataset& data, int arm, int level,
                          const CovariateSelector& covariates);

/// Horvitz-Thompson weights I(A=a)/(n_a/n) * R/pi for every subject.
std::vector<double> ipw_weights(const TrialDataset& data, const Propensity& propensity);

CellTable ipw_cells(const TrialDataset& data, const Propensity& propensity,
                    const WeightSpec& weights = {});

CellTable aipw_cells(const TrialDataset& data, const Propensity& propensity,
                     const MultinomialFit& outcome);

// --- orchestration --------------------------------------------------------------

struct ModelSpec {
  CovariateSelector missingness;
  CovariateSelector outcome;
};

struct PropensitySummary {
  int arm = 0;
  int level = 1;
  bool modeled = false;
  double min_pi = 1.0;
  double max_pi = 1.0;
  std::size_t below_threshold = 0;
  /// Mean HT weight over all subjects; the Hajek divisor.
  double normalizer = 1.0;
  /// Counts of fitted pi over arm subjects in 20 equal bins on [0, 1].
  std::array<std::size_t, 20> histogram{};
};

struct Diagnostics {
  std::vector<PropensitySummary> propensity;
  std::vector<std::string> warnings;
};

struct Estimate {
  Method method = Method::standard;
  WeightKind weights = WeightKind::horvitz_thompson;
  WinTriple triple;
  WinMeasures measures;
  /// Per arm, levels 1..K; empty for the standard method.
  std::array<CellTables, 2> cells;
  std::array<std::vector<Propensity>, 2> propensities;
  std::array<std::vector<MultinomialFit>, 2> outcomes;
  Diagnostics diagnostics;
};

Estimate estimate(const TrialDataset& data, Method method, const ModelSpec& models = {},
                  const WeightSpec& weights = {});

}  // namespace winstat
