#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "winstat/estimators.hpp"

namespace winstat {

enum class Measure { wr, wo, nb, door };

inline constexpr std::array<Measure, 4> kAllMeasures{Measure::wr, Measure::wo, Measure::nb,
                                                     Measure::door};

std::string_view to_string(Measure measure);
double measure_value(const WinMeasures& measures, Measure measure);

/// Per-subject influence values of (p_W, p_L, p_T).
struct TripleInfluence {
  Eigen::VectorXd win;
  Eigen::VectorXd loss;
  Eigen::VectorXd tie;
};

/// Per-subject influence of every estimated cell (n x cells per arm and level)
/// and of the resulting triple.
struct InfluenceMatrix {
  std::array<std::vector<Eigen::MatrixXd>, 2> cells;
  TripleInfluence triple;
};

/// Horvitz-Thompson IPW cell influence for all cells of one (arm, level).
Eigen::MatrixXd ipw_cell_influence(const TrialDataset& data, const Propensity& propensity,
                                   const CellTable& estimate);
Eigen::VectorXd ipw_cell_influence(const TrialDataset& data, const Propensity& propensity,
                                   const CellTable& estimate, std::size_t cell);

Eigen::MatrixXd aipw_cell_influence(const TrialDataset& data, const Propensity& propensity,
                                    const MultinomialFit& outcome, const CellTable& estimate);
Eigen::VectorXd aipw_cell_influence(const TrialDataset& data, const Propensity& propensity,
                                    const MultinomialFit& outcome, const CellTable& estimate,
                                    std::size_t cell);

/// Gradient of p_W and p_L with respect to every cell of every table.
struct TripleGradient {
  std::array<std::vector<Eigen::VectorXd>, 2> win;
  std::array<std::vector<Eigen::VectorXd>, 2> loss;
};
TripleGradient triple_gradient(const CellTables& treated, const CellTables& control);

/// Chain rule from cell influences (indexed [arm][level-1]) to the triple.
TripleInfluence triple_influence(const std::array<std::vector<Eigen::MatrixXd>, 2>& cell_influence,
                                 const std::array<CellTables, 2>& cells);

/// Estimator covariance of (p_W, p_L, p_T): n^-2 sum psi psi'.
Eigen::Matrix3d covariance_triple(const TripleInfluence& influence);

/// Two-sided normal critical value; exactly 1.96 at level 0.95.
double critical_value(double level);

struct MeasureReport {
  std::string method;
  Measure measure = Measure::wr;
  double estimate = 0.0;
  /// Standard error on the inference scale (log for WR and WO).
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double p_value = 1.0;
  bool log_scale = false;
  /// Empty, "degenerate" (zero SE), "suppressed" (non-finite estimate) or
  /// "no-variance" (Hajek weights).
  std::string flag;
};

MeasureReport measure_report(const WinTriple& triple, const Eigen::Matrix3d& covariance,
                             Measure measure, double level = 0.95, std::string method = {});

/// Hajek projection of the pair-counting U-statistic, missing levels tied.
TripleInfluence standard_influence(const TrialDataset& data, const WinTriple& triple);

std::vector<MeasureReport> standard_variance(const TrialDataset& data, const WinTriple& triple,
                                             double level = 0.95);

struct Inference {
  InfluenceMatrix influence;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  std::vector<MeasureReport> reports;
  bool has_variance = true;
};

/// Influence functions, covariance and the four measure reports for an estimate.
Inference infer(const TrialDataset& data, const Estimate& estimate, double level = 0.95);

}  // namespace winstat
