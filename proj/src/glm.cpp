#include "winstat/glm.hpp"

#include <algorithm>
#include <cmath>

#include "winstat/error.hpp"

namespace winstat {

namespace {

constexpr double kScoreTolerance = 1e-8;
constexpr double kStepTolerance = 1e-10;
constexpr int kLogisticMaxIterations = 100;
constexpr int kMultinomialMaxIterations = 200;
constexpr double kSeparationNorm = 30.0;
constexpr double kRidge = 1e-8;
constexpr double kConditionLimit = 1e12;

[[noreturn]] void fail(Errc code, const std::string& message) {
  throw Error(code, "glm", message);
}

struct ArmDesign {
  Eigen::MatrixXd X;
  std::vector<std::size_t> rows;  // dataset indices
};

ArmDesign arm_design(const TrialDataset& data, int arm, const CovariateSelector& covariates,
                     bool complete_only, int level) {
  for (std::size_t j : covariates)
    if (j >= data.covariate_count()) fail(Errc::dimension_mismatch, "covariate selector out of range");
  ArmDesign d;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Subject& s = data[i];
    if (s.arm != arm) continue;
    if (complete_only && !joint_nonmiss(s, level)) continue;
    d.rows.push_back(i);
  }
  const auto p = static_cast<Eigen::Index>(covariates.size() + 1);
  d.X.resize(static_cast<Eigen::Index>(d.rows.size()), p);
  for (std::size_t r = 0; r < d.rows.size(); ++r)
    d.X.row(static_cast<Eigen::Index>(r)) = design_row(data[d.rows[r]], covariates).transpose();
  return d;
}

double log_expit(double eta) {
  return eta >= 0 ? -std::log1p(std::exp(-eta)) : eta - std::log1p(std::exp(eta));
}

}  // namespace

Eigen::VectorXd design_row(const Subject& subject, const CovariateSelector& covariates) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(covariates.size() + 1));
  x(0) = 1.0;
  for (std::size_t j = 0; j < covariates.size(); ++j)
    x(static_cast<Eigen::Index>(j + 1)) = subject.covariates.at(covariates[j]);
  return x;
}

double expit(double eta) noexcept {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

SymmetricInverse invert_information(const Eigen::MatrixXd& information,
                                    const std::string& component) {
  SymmetricInverse out;
  const auto p = information.rows();
  if (p == 0) return out;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(information);
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double largest = values.cwiseAbs().maxCoeff();
  if (!(largest > 0.0) || !std::isfinite(largest))
    throw Error(Errc::singular_information, component, "information matrix is zero or non-finite");
  const double smallest = values.minCoeff();
  out.condition = smallest > 0 ? largest / smallest : std::numeric_limits<double>::infinity();
  if (out.condition <= kConditionLimit) {
    out.inverse = eig.eigenvectors() * values.cwiseInverse().asDiagonal() *
                  eig.eigenvectors().transpose();
    return out;
  }
  out.pseudo = true;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(p);
  for (Eigen::Index i = 0; i < p; ++i)
    if (values(i) > largest / kConditionLimit) inv(i) = 1.0 / values(i);
  out.inverse = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  return out;
}

// --- logistic ----------------------------------------------------------------

LogisticFit fit_logistic(const TrialDataset& data, int arm, int level,
                         const CovariateSelector& covariates) {
  if (arm != 0 && arm != 1) fail(Errc::invalid_argument, "arm must be 0 or 1");
  data.hierarchy().cell_count(level);  // validates level
  const ArmDesign d = arm_design(data, arm, covariates, false, level);
  const Eigen::Index m = d.X.rows();
  const Eigen::Index p = d.X.cols();
  const std::string tag = "logistic(arm=" + std::to_string(arm) + ", level=" + std::to_string(level) + ")";

  if (m < p + 2)
    fail(Errc::rank_deficient, tag + ": arm has " + std::to_string(m) + " subjects for " +
                                   std::to_string(p) + " coefficients");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.X);
  if (qr.rank() < p) fail(Errc::rank_deficient, tag + ": design matrix is rank deficient");

  Eigen::VectorXd r(m);
  for (Eigen::Index i = 0; i < m; ++i)
    r(i) = joint_nonmiss(data[d.rows[static_cast<std::size_t>(i)]], level) ? 1.0 : 0.0;
  const double observed = r.sum();
  if (observed == 0.0 || observed == static_cast<double>(m))
    fail(Errc::separation, tag + ": all outcomes identical; probability " +
                               std::string(observed == 0.0 ? "0" : "1") +
                               " is not representable, reduce the model");

  LogisticFit fit;
  fit.arm = arm;
  fit.level = level;
  fit.covariates = covariates;
  fit.sample_size = data.size();
  fit.coefficients = Eigen::VectorXd::Zero(p);
  const double rate = observed / static_cast<double>(m);
  fit.coefficients(0) = std::log(rate / (1.0 - rate));

  auto loglik = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = d.X * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) ll += r(i) * log_expit(eta(i)) + (1 - r(i)) * log_expit(-eta(i));
    return ll;
  };

  Eigen::VectorXd pi(m);
  Eigen::VectorXd score(p);
  Eigen::MatrixXd info(p, p);
  auto evaluate = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = d.X * beta;
    for (Eigen::Index i = 0; i < m; ++i) pi(i) = expit(eta(i));
    score = d.X.transpose() * (r - pi);
    const Eigen::VectorXd w = pi.array() * (1.0 - pi.array());
    info = d.X.transpose() * w.asDiagonal() * d.X;
  };

  double current = loglik(fit.coefficients);
  for (fit.iterations = 0; fit.iterations < kLogisticMaxIterations; ++fit.iterations) {
    evaluate(fit.coefficients);
    fit.max_score = score.cwiseAbs().maxCoeff();
    if (fit.max_score < kScoreTolerance) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd step = info.ldlt().solve(score);
    double scale = 1.0;
    Eigen::VectorXd next = fit.coefficients + step;
    double candidate = loglik(next);
    while (candidate < current - 1e-12 && scale > 1e-6) {
      scale *= 0.5;
      next = fit.coefficients + scale * step;
      candidate = loglik(next);
    }
    fit.coefficients = next;
    current = candidate;
    if ((scale * step).cwiseAbs().maxCoeff() < kStepTolerance) {
      evaluate(fit.coefficients);
      fit.max_score = score.cwiseAbs().maxCoeff();
      fit.converged = true;
      ++fit.iterations;
      break;
    }
  }
  if (!fit.converged) {
    evaluate(fit.coefficients);
    fit.max_score = score.cwiseAbs().maxCoeff();
  }
  // Under complete separation the score vanishes as the coefficients diverge,
  // so a small score alone does not rule it out: near-perfect prediction does.
  if ((fit.coefficients.norm() > kSeparationNorm && !fit.converged) ||
      (r - pi).cwiseAbs().maxCoeff() < 1e-4)
    fail(Errc::separation, tag + ": complete separation detected (coefficient norm " +
                               std::to_string(fit.coefficients.norm()) +
                               "); reduce the covariate set");
  fit.information = info;
  auto inv = invert_information(info / static_cast<double>(fit.sample_size), tag);
  fit.average_information_inverse = std::move(inv.inverse);
  if (inv.pseudo)
    fit.warnings.push_back(tag + ": ill-conditioned information (condition " +
                           std::to_string(inv.condition) + "); using pseudo-inverse");
  return fit;
}

double logistic_loglik(const TrialDataset& data, int arm, int level,
                       const CovariateSelector& covariates, const Eigen::VectorXd& beta) {
  const ArmDesign d = arm_design(data, arm, covariates, false, level);
  if (beta.size() != d.X.cols()) fail(Errc::dimension_mismatch, "coefficient length mismatch");
  const Eigen::VectorXd eta = d.X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    ll += log_expit(joint_nonmiss(data[d.rows[static_cast<std::size_t>(i)]], level) ? eta(i) : -eta(i));
  return ll;
}

Eigen::VectorXd logistic_score(const TrialDataset& data, int arm, int level,
                               const CovariateSelector& covariates, const Eigen::VectorXd& beta) {
  const ArmDesign d = arm_design(data, arm, covariates, false, level);
  if (beta.size() != d.X.cols()) fail(Errc::dimension_mismatch, "coefficient length mismatch");
  Eigen::VectorXd residual(d.X.rows());
  for (Eigen::Index i = 0; i < residual.size(); ++i) {
    const double r = joint_nonmiss(data[d.rows[static_cast<std::size_t>(i)]], level) ? 1.0 : 0.0;
    residual(i) = r - expit(d.X.row(i).dot(beta));
  }
  return d.X.transpose() * residual;
}

double predict_pi(const LogisticFit& fit, const Eigen::VectorXd& design) {
  if (design.size() != fit.coefficients.size())
    fail(Errc::dimension_mismatch, "design length " + std::to_string(design.size()) +
                                       " does not match " +
                                       std::to_string(fit.coefficients.size()) + " coefficients");
  return expit(design.dot(fit.coefficients));
}

double predict_pi(const LogisticFit& fit, const Subject& subject) {
  return predict_pi(fit, design_row(subject, fit.covariates));
}

Eigen::VectorXd logistic_influence(const LogisticFit& fit, const Subject& subject) {
  if (subject.arm != fit.arm) return Eigen::VectorXd::Zero(fit.coefficients.size());
  const Eigen::VectorXd x = design_row(subject, fit.covariates);
  const double r = joint_nonmiss(subject, fit.level) ? 1.0 : 0.0;
  return fit.average_information_inverse * (x * (r - predict_pi(fit, x)));
}

// --- multinomial -------------------------------------------------------------

int MultinomialFit::parameter_block(std::size_t cell) const {
  for (std::size_t j = 0; j + 1 < modeled.size(); ++j)
    if (modeled[j] == cell) return static_cast<int>(j);
  return -1;
}

Eigen::MatrixXd MultinomialFit::cell_information(std::size_t cell) const {
  const int j = parameter_block(cell);
  if (j < 0) fail(Errc::invalid_argument, "cell is the reference or not modeled");
  const auto p = coefficients.rows();
  return information.block(j * p, j * p, p, p);
}

namespace {

// Softmax over modeled cells with the reference at eta = 0.
void modeled_probabilities(const MultinomialFit& fit, const Eigen::VectorXd& x,
                           Eigen::VectorXd& mu_modeled) {
  const auto q = fit.coefficients.cols();
  mu_modeled.resize(q + 1);
  Eigen::VectorXd eta(q + 1);
  eta.head(q) = fit.coefficients.transpose() * x;
  eta(q) = 0.0;
  const double top = eta.maxCoeff();
  mu_modeled = (eta.array() - top).exp();
  mu_modeled /= mu_modeled.sum();
}

}  // namespace

MultinomialFit fit_multinomial(const TrialDataset& data, int arm, int level,
                               const CovariateSelector& covariates) {
  if (arm != 0 && arm != 1) fail(Errc::invalid_argument, "arm must be 0 or 1");
  const Hierarchy& h = data.hierarchy();
  const std::size_t cells = h.cell_count(level);
  const ArmDesign d = arm_design(data, arm, covariates, true, level);
  const std::string tag = "multinomial(arm=" + std::to_string(arm) + ", level=" + std::to_string(level) + ")";
  const Eigen::Index m = d.X.rows();
  const Eigen::Index p = d.X.cols();
  if (m == 0) fail(Errc::no_complete_cases, tag + ": no complete cases");

  std::vector<std::size_t> cell_of(static_cast<std::size_t>(m));
  std::vector<std::size_t> counts(cells, 0);
  for (Eigen::Index i = 0; i < m; ++i) {
    cell_of[static_cast<std::size_t>(i)] = *prefix_cell(h, data[d.rows[static_cast<std::size_t>(i)]], level);
    ++counts[cell_of[static_cast<std::size_t>(i)]];
  }

  MultinomialFit fit;
  fit.arm = arm;
  fit.level = level;
  fit.covariates = covariates;
  fit.cell_count = cells;
  fit.sample_size = data.size();
  std::size_t dropped = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    if (counts[c] > 0)
      fit.modeled.push_back(c);
    else
      ++dropped;
  }
  if (dropped > 0)
    fit.warnings.push_back(tag + ": " + std::to_string(dropped) +
                           " unobserved cell(s) excluded and predicted as 0");

  const auto q = static_cast<Eigen::Index>(fit.modeled.size() - 1);
  fit.coefficients = Eigen::MatrixXd::Zero(p, q);
  // position of each data row's cell among modeled cells
  std::vector<Eigen::Index> slot(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto it = std::lower_bound(fit.modeled.begin(), fit.modeled.end(), cell_of[static_cast<std::size_t>(i)]);
    slot[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(it - fit.modeled.begin());
  }
  const double ref_count = static_cast<double>(counts[fit.reference()]);
  for (Eigen::Index j = 0; j < q; ++j)
    fit.coefficients(0, j) = std::log(static_cast<double>(counts[fit.modeled[static_cast<std::size_t>(j)]]) / ref_count);

  const Eigen::Index dim = p * q;
  Eigen::VectorXd score(dim);
  Eigen::MatrixXd info(dim, dim);
  Eigen::MatrixXd mu(m, q + 1);  // fitted probabilities over modeled cells
  Eigen::MatrixXd indicator = Eigen::MatrixXd::Zero(m, q);
  for (Eigen::Index i = 0; i < m; ++i)
    if (slot[static_cast<std::size_t>(i)] < q) indicator(i, slot[static_cast<std::size_t>(i)]) = 1.0;

  auto probabilities = [&](const Eigen::MatrixXd& coefficients) {
    mu.leftCols(q).noalias() = d.X * coefficients;
    mu.col(q).setZero();
    for (Eigen::Index i = 0; i < m; ++i) {
      auto row = mu.row(i);
      row.array() = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
  };
  auto loglik = [&](const Eigen::MatrixXd& coefficients) {
    probabilities(coefficients);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
      ll += std::log(std::max(mu(i, slot[static_cast<std::size_t>(i)]), 1e-300));
    return ll;
  };
  // Score and information at the probabilities currently held in `mu`.
  auto evaluate = [&] {
    const Eigen::MatrixXd s = d.X.transpose() * (indicator - mu.leftCols(q));
    score = Eigen::Map<const Eigen::VectorXd>(s.data(), dim);
    Eigen::MatrixXd weighted(m, p);
    for (Eigen::Index j = 0; j < q; ++j) {
      for (Eigen::Index l = j; l < q; ++l) {
        Eigen::VectorXd w = -mu.col(j).cwiseProduct(mu.col(l));
        if (j == l) w += mu.col(j);
        weighted = d.X.array().colwise() * w.array();
        info.block(j * p, l * p, p, p).noalias() = d.X.transpose() * weighted;
        if (l != j) info.block(l * p, j * p, p, p) = info.block(j * p, l * p, p, p).transpose();
      }
    }
  };

  if (q == 0) {
    fit.converged = true;
    fit.information = Eigen::MatrixXd(0, 0);
    fit.average_information_inverse = Eigen::MatrixXd(0, 0);
    return fit;
  }

  double current = loglik(fit.coefficients);
  for (fit.iterations = 0; fit.iterations < kMultinomialMaxIterations; ++fit.iterations) {
    evaluate();
    fit.max_score = score.cwiseAbs().maxCoeff();
    if (fit.max_score < kScoreTolerance) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd ridged = info;
    ridged.diagonal().array() += kRidge;
    const Eigen::VectorXd step = ridged.ldlt().solve(score);
    const Eigen::Map<const Eigen::MatrixXd> step_matrix(step.data(), p, q);
    Eigen::MatrixXd next;
    double scale = 1.0;
    double candidate = 0.0;
    for (;;) {
      next = fit.coefficients + scale * step_matrix;
      candidate = loglik(next);
      if (candidate >= current - 1e-12 || scale < 1e-6) break;
      scale *= 0.5;
    }
    fit.coefficients = next;
    current = candidate;
    if (scale * step.cwiseAbs().maxCoeff() < kStepTolerance) {
      evaluate();
      fit.max_score = score.cwiseAbs().maxCoeff();
      fit.converged = true;
      ++fit.iterations;
      break;
    }
  }
  if (!fit.converged)
    fail(Errc::not_converged, tag + ": no convergence after " +
                                  std::to_string(kMultinomialMaxIterations) + " iterations");
  fit.information = info;
  auto inv = invert_information(info / static_cast<double>(fit.sample_size), tag);
  fit.average_information_inverse = std::move(inv.inverse);
  if (inv.pseudo)
    fit.warnings.push_back(tag + ": ill-conditioned information (condition " +
                           std::to_string(inv.condition) + "); using pseudo-inverse");
  return fit;
}

Eigen::VectorXd predict_mu(const MultinomialFit& fit, const Eigen::VectorXd& design) {
  if (design.size() != fit.coefficients.rows())
    fail(Errc::dimension_mismatch, "design length does not match outcome model");
  Eigen::VectorXd mu_modeled;
  modeled_probabilities(fit, design, mu_modeled);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fit.cell_count));
  for (std::size_t j = 0; j < fit.modeled.size(); ++j)
    mu(static_cast<Eigen::Index>(fit.modeled[j])) = mu_modeled(static_cast<Eigen::Index>(j));
  return mu;
}

Eigen::VectorXd predict_mu(const MultinomialFit& fit, const Subject& subject) {
  return predict_mu(fit, design_row(subject, fit.covariates));
}

Eigen::VectorXd multinomial_score(const MultinomialFit& fit, const TrialDataset& data,
                                  const Subject& subject) {
  const auto p = fit.coefficients.rows();
  const auto q = fit.coefficients.cols();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(p * q);
  if (subject.arm != fit.arm) return u;
  const auto cell = prefix_cell(data.hierarchy(), subject, fit.level);
  if (!cell) return u;
  const Eigen::VectorXd x = design_row(subject, fit.covariates);
  Eigen::VectorXd mu_modeled;
  modeled_probabilities(fit, x, mu_modeled);
  for (Eigen::Index j = 0; j < q; ++j) {
    const double z = fit.modeled[static_cast<std::size_t>(j)] == *cell ? 1.0 : 0.0;
    u.segment(j * p, p) = x * (z - mu_modeled(j));
  }
  return u;
}

Eigen::VectorXd multinomial_influence(const MultinomialFit& fit, const TrialDataset& data,
                                      const Subject& subject) {
  if (fit.parameter_count() == 0) return Eigen::VectorXd(0);
  return fit.average_information_inverse * multinomial_score(fit, data, subject);
}

}  // namespace winstat
