#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "winstat/data.hpp"

namespace winstat {

/// Indices into TrialDataset covariates; an empty selector is intercept-only.
using CovariateSelector = std::vector<std::size_t>;

/// (1, x_sel...) for one subject.
Eigen::VectorXd design_row(const Subject& subject, const CovariateSelector& covariates);

/// Numerically stable inverse logit.
double expit(double eta) noexcept;

/// Inverse of a symmetric information matrix. Falls back to a rank-truncated
/// pseudo-inverse when the condition number exceeds 1e12.
struct SymmetricInverse {
  Eigen::MatrixXd inverse;
  double condition = 1.0;
  bool pseudo = false;
};
SymmetricInverse invert_information(const Eigen::MatrixXd& information,
                                    const std::string& component);

/// Per-arm logistic model for joint non-missingness of endpoints 1..level.
struct LogisticFit {
  int arm = 0;
  int level = 1;
  CovariateSelector covariates;
  Eigen::VectorXd coefficients;
  /// Sum over arm subjects of X X' pi (1 - pi).
  Eigen::MatrixXd information;
  /// Inverse of information / n, n counting both arms.
  Eigen::MatrixXd average_information_inverse;
  std::size_t sample_size = 0;
  bool converged = false;
  int iterations = 0;
  double max_score = 0.0;
  std::vector<std::string> warnings;
};

LogisticFit fit_logistic(const TrialDataset& data, int arm, int level,
                         const CovariateSelector& covariates);

/// Bernoulli log-likelihood of R over arm subjects at arbitrary coefficients.
double logistic_loglik(const TrialDataset& data, int arm, int level,
                       const CovariateSelector& covariates, const Eigen::VectorXd& beta);
/// Its gradient, sum I(A=a) X (R - pi).
Eigen::VectorXd logistic_score(const TrialDataset& data, int arm, int level,
                               const CovariateSelector& covariates, const Eigen::VectorXd& beta);

double predict_pi(const LogisticFit& fit, const Eigen::VectorXd& design);
double predict_pi(const LogisticFit& fit, const Subject& subject);

/// J^-1 I(A=a) X (R - pi), J the sample-average information.
Eigen::VectorXd logistic_influence(const LogisticFit& fit, const Subject& subject);

/// Baseline-category multinomial logit over the joint cells of endpoints
/// 1..level, fitted on arm subjects observed through `level`.
///
/// Only cells observed in the arm are modeled. The reference is the best
/// observed cell (largest index), with its linear predictor fixed at zero.
/// Parameters are stacked per non-reference modeled cell, in ascending cell
/// order, each block holding one coefficient per design column.
struct MultinomialFit {
  int arm = 0;
  int level = 1;
  CovariateSelector covariates;
  std::size_t cell_count = 0;
  std::vector<std::size_t> modeled;  // ascending; back() is the reference
  Eigen::MatrixXd coefficients;      // design columns x (modeled - 1)
  /// Full information over the stacked parameters, summed over fitting subjects.
  Eigen::MatrixXd information;
  Eigen::MatrixXd average_information_inverse;
  std::size_t sample_size = 0;
  bool converged = false;
  int iterations = 0;
  double max_score = 0.0;
  std::vector<std::string> warnings;

  std::size_t reference() const { return modeled.back(); }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(coefficients.size());
  }
  /// Position of `cell` among non-reference modeled cells, or -1.
  int parameter_block(std::size_t cell) const;
  /// Diagonal information block of one non-reference modeled cell.
  Eigen::MatrixXd cell_information(std::size_t cell) const;
};

MultinomialFit fit_multinomial(const TrialDataset& data, int arm, int level,
                               const CovariateSelector& covariates);

/// Conditional cell probabilities over all cells at the fit's level.
Eigen::VectorXd predict_mu(const MultinomialFit& fit, const Eigen::VectorXd& design);
Eigen::VectorXd predict_mu(const MultinomialFit& fit, const Subject& subject);

/// Stacked score I(A=a) R X (Z - mu) for one subject.
Eigen::VectorXd multinomial_score(const MultinomialFit& fit, const TrialDataset& data,
                                  const Subject& subject);

/// J^-1 U for the stacked parameters of one subject.
Eigen::VectorXd multinomial_influence(const MultinomialFit& fit, const TrialDataset& data,
                                      const Subject& subject);

}  // namespace winstat
