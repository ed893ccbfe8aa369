#include "winstat/inference.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>

#include "winstat/error.hpp"

namespace winstat {

namespace {

[[noreturn]] void fail(Errc code, const std::string& message) {
  throw Error(code, "inference", message);
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::Map<const Eigen::RowVectorXd> row_of(const CellTable& t) {
  return {t.probs.data(), static_cast<Eigen::Index>(t.probs.size())};
}

// Influence of the estimated arm share n_a/n enters every cell through the
// I(A=a)/(n_a/n) factor of the weight.
void add_arm_share_term(const TrialDataset& data, int arm, const Eigen::RowVectorXd& scaled,
                        Eigen::MatrixXd& psi) {
  const double e = static_cast<double>(data.arm_size(arm)) / static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double d = (data[i].arm == arm ? 1.0 : 0.0) - e;
    psi.row(static_cast<Eigen::Index>(i)) -= (d / e) * scaled;
  }
}

void check_table(const TrialDataset& data, const Propensity& p, const CellTable& t) {
  if (t.arm != p.arm || t.level != p.level || t.size() != data.hierarchy().cell_count(p.level))
    fail(Errc::dimension_mismatch, "cell table does not match the propensity model");
}

}  // namespace

std::string_view to_string(Measure measure) {
  switch (measure) {
    case Measure::wr: return "WR";
    case Measure::wo: return "WO";
    case Measure::nb: return "NB";
    case Measure::door: return "DOOR";
  }
  return "?";
}

double measure_value(const WinMeasures& m, Measure measure) {
  switch (measure) {
    case Measure::wr: return m.wr;
    case Measure::wo: return m.wo;
    case Measure::nb: return m.nb;
    case Measure::door: return m.door;
  }
  return kNaN;
}

// --- cell influences --------------------------------------------------------------

Eigen::MatrixXd ipw_cell_influence(const TrialDataset& data, const Propensity& propensity,
                                   const CellTable& estimate) {
  check_table(data, propensity, estimate);
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto cells = static_cast<Eigen::Index>(estimate.size());
  const Hierarchy& h = data.hierarchy();
  const std::vector<double> w = ipw_weights(data, propensity);
  const Eigen::RowVectorXd P = row_of(estimate);

  Eigen::MatrixXd psi = (-P).replicate(n, 1);
  std::vector<Eigen::Index> cell(data.size(), -1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w[static_cast<std::size_t>(i)] == 0.0) continue;
    cell[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(*prefix_cell(h, data[static_cast<std::size_t>(i)], propensity.level));
    psi(i, cell[static_cast<std::size_t>(i)]) += w[static_cast<std::size_t>(i)];
  }
  add_arm_share_term(data, propensity.arm, P, psi);

  if (propensity.fit) {
    const LogisticFit& fit = *propensity.fit;
    const auto p = fit.coefficients.size();
    Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(p, cells);
    Eigen::MatrixXd beta_if(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Subject& s = data[static_cast<std::size_t>(i)];
      beta_if.row(i) = logistic_influence(fit, s).transpose();
      if (cell[static_cast<std::size_t>(i)] < 0) continue;
      const Eigen::VectorXd x = design_row(s, fit.covariates);
      gamma.col(cell[static_cast<std::size_t>(i)]) -= w[static_cast<std::size_t>(i)] * (1.0 - predict_pi(fit, x)) * x;
    }
    gamma /= static_cast<double>(n);
    psi.noalias() += beta_if * gamma;
  }
  return psi;
}

Eigen::VectorXd ipw_cell_influence(const TrialDataset& data, const Propensity& propensity,
                                   const CellTable& estimate, std::size_t cell) {
  if (cell >= estimate.size()) fail(Errc::out_of_range, "cell index out of range");
  return ipw_cell_influence(data, propensity, estimate).col(static_cast<Eigen::Index>(cell));
}

Eigen::MatrixXd aipw_cell_influence(const TrialDataset& data, const Propensity& propensity,
                                    const MultinomialFit& outcome, const CellTable& estimate) {
  check_table(data, propensity, estimate);
  if (outcome.arm != propensity.arm || outcome.level != propensity.level)
    fail(Errc::dimension_mismatch, "outcome model does not match the propensity model");
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto cells = static_cast<Eigen::Index>(estimate.size());
  const Hierarchy& h = data.hierarchy();
  const std::vector<double> w = ipw_weights(data, propensity);
  const Eigen::RowVectorXd P = row_of(estimate);

  const auto p_out = outcome.coefficients.rows();
  const auto q = static_cast<Eigen::Index>(outcome.parameter_count());
  const auto blocks = outcome.coefficients.cols();

  Eigen::MatrixXd psi(n, cells);
  Eigen::MatrixXd residual = Eigen::MatrixXd::Zero(n, cells);  // w (Z - mu)
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(q, cells);
  Eigen::MatrixXd gamma_if(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Subject& s = data[static_cast<std::size_t>(i)];
    const double wi = w[static_cast<std::size_t>(i)];
    const Eigen::VectorXd x = design_row(s, outcome.covariates);
    const Eigen::VectorXd mu = predict_mu(outcome, x);
    if (wi != 0.0) {
      residual.row(i) = -wi * mu.transpose();
      residual(i, static_cast<Eigen::Index>(*prefix_cell(h, s, propensity.level))) += wi;
    }
    psi.row(i) = residual.row(i) + mu.transpose() - P;
    if (q > 0) {
      gamma_if.row(i) = multinomial_influence(outcome, data, s).transpose();
      // d mu_c / d gamma_d = mu_c (1{c=d} - mu_d) x
      for (Eigen::Index j = 0; j < blocks; ++j) {
        const auto d = static_cast<Eigen::Index>(outcome.modeled[static_cast<std::size_t>(j)]);
        Eigen::RowVectorXd m = -mu(d) * mu.transpose();
        m(d) += mu(d);
        delta.middleRows(j * p_out, p_out).noalias() += (1.0 - wi) * x * m;
      }
    }
  }
  if (q > 0) {
    delta /= static_cast<double>(n);
    psi.noalias() += gamma_if * delta;
  }
  const Eigen::RowVectorXd mean_residual = residual.colwise().mean();
  add_arm_share_term(data, propensity.arm, mean_residual, psi);

  if (propensity.fit) {
    const LogisticFit& fit = *propensity.fit;
    const auto p = fit.coefficients.size();
    Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(p, cells);
    Eigen::MatrixXd beta_if(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Subject& s = data[static_cast<std::size_t>(i)];
      beta_if.row(i) = logistic_influence(fit, s).transpose();
      if (w[static_cast<std::size_t>(i)] == 0.0) continue;
      const Eigen::VectorXd x = design_row(s, fit.covariates);
      // residual row already carries the weight
      lambda.noalias() -= (1.0 - predict_pi(fit, x)) * x * residual.row(i);
    }
    lambda /= static_cast<double>(n);
    psi.noalias() += beta_if * lambda;
  }
  return psi;
}

Eigen::VectorXd aipw_cell_influence(const TrialDataset& data, const Propensity& propensity,
                                    const MultinomialFit& outcome, const CellTable& estimate,
                                    std::size_t cell) {
  if (cell >= estimate.size()) fail(Errc::out_of_range, "cell index out of range");
  return aipw_cell_influence(data, propensity, outcome, estimate).col(static_cast<Eigen::Index>(cell));
}

// --- triple ----------------------------------------------------------------------

TripleGradient triple_gradient(const CellTables& treated, const CellTables& control) {
  assemble_triple(treated, control);  // shape validation
  TripleGradient g;
  for (std::size_t k = 0; k < treated.size(); ++k) {
    const CellTable& t1 = treated[k];
    const CellTable& t0 = control[k];
    const auto size = static_cast<Eigen::Index>(t1.size());
    Eigen::VectorXd w1 = Eigen::VectorXd::Zero(size), w0 = w1, l1 = w1, l0 = w1;
    const auto width = static_cast<std::size_t>(t1.supports.back());
    for (std::size_t base = 0; base < t1.size(); base += width) {
      double below0 = 0.0, below1 = 0.0, above0 = 0.0, above1 = 0.0;
      for (std::size_t i = 0; i < width; ++i) {
        above0 += t0.probs[base + i];
        above1 += t1.probs[base + i];
      }
      for (std::size_t i = 0; i < width; ++i) {
        const auto c = static_cast<Eigen::Index>(base + i);
        above0 -= t0.probs[base + i];
        above1 -= t1.probs[base + i];
        w1(c) = below0;  // treated at i beats control below i
        l1(c) = above0;
        w0(c) = above1;  // control at i is beaten by treated above i
        l0(c) = below1;
        below0 += t0.probs[base + i];
        below1 += t1.probs[base + i];
      }
    }
    g.win[1].push_back(std::move(w1));
    g.win[0].push_back(std::move(w0));
    g.loss[1].push_back(std::move(l1));
    g.loss[0].push_back(std::move(l0));
  }
  return g;
}

TripleInfluence triple_influence(const std::array<std::vector<Eigen::MatrixXd>, 2>& cell_influence,
                                 const std::array<CellTables, 2>& cells) {
  const TripleGradient g = triple_gradient(cells[1], cells[0]);
  if (cell_influence[0].size() != cells[0].size() || cell_influence[1].size() != cells[1].size() ||
      cell_influence[0].empty())
    fail(Errc::dimension_mismatch, "one influence matrix per arm and level required");
  const auto n = cell_influence[0][0].rows();
  TripleInfluence out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), {}};
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t k = 0; k < cells[a].size(); ++k) {
      const Eigen::MatrixXd& psi = cell_influence[a][k];
      if (psi.rows() != n || psi.cols() != g.win[a][k].size())
        fail(Errc::dimension_mismatch, "influence matrix shape does not match its cell table");
      out.win.noalias() += psi * g.win[a][k];
      out.loss.noalias() += psi * g.loss[a][k];
    }
  }
  out.tie = -out.win - out.loss;
  return out;
}

Eigen::Matrix3d covariance_triple(const TripleInfluence& psi) {
  const auto n = psi.win.size();
  if (n < 2) fail(Errc::invalid_argument, "covariance needs at least two subjects");
  if (psi.loss.size() != n || psi.tie.size() != n)
    fail(Errc::dimension_mismatch, "influence vectors differ in length");
  Eigen::MatrixXd m(n, 3);
  m << psi.win, psi.loss, psi.tie;
  const double nn = static_cast<double>(n);
  return (m.transpose() * m) / (nn * nn);
}

double critical_value(double level) {
  if (!(level > 0.5 && level < 1.0))
    fail(Errc::invalid_argument, "confidence level must lie in (0.5, 1)");
  if (level == 0.95) return 1.96;
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + level / 2.0);
}

MeasureReport measure_report(const WinTriple& t, const Eigen::Matrix3d& cov, Measure measure,
                             double level, std::string method) {
  MeasureReport r;
  r.method = std::move(method);
  r.measure = measure;
  const WinMeasures m = win_measures(t);
  r.estimate = measure_value(m, measure);
  const double z = critical_value(level);

  Eigen::Vector3d grad;
  double stat_center = 0.0;  // estimate minus null on the inference scale
  switch (measure) {
    case Measure::wr:
      if (!(t.win > 0.0) || !(t.loss > 0.0))
        fail(Errc::non_finite, "win ratio needs positive win and loss probabilities");
      grad << 1.0 / t.win, -1.0 / t.loss, 0.0;
      r.log_scale = true;
      stat_center = std::log(r.estimate);
      break;
    case Measure::wo: {
      const double a = t.win + 0.5 * t.tie;
      const double b = t.loss + 0.5 * t.tie;
      if (!(a > 0.0) || !(b > 0.0))
        fail(Errc::non_finite, "win odds needs positive numerator and denominator");
      grad << 1.0 / a, -1.0 / b, 0.5 / a - 0.5 / b;
      r.log_scale = true;
      stat_center = std::log(r.estimate);
      break;
    }
    case Measure::nb:
      grad << 1.0, -1.0, 0.0;
      stat_center = r.estimate;
      break;
    case Measure::door:
      grad << 1.0, 0.0, 0.5;
      stat_center = r.estimate - 0.5;
      break;
  }
  r.se = std::sqrt(std::max(0.0, grad.dot(cov * grad)));
  const double center = r.log_scale ? std::log(r.estimate) : r.estimate;
  const double lo = center - z * r.se;
  const double hi = center + z * r.se;
  r.lower = r.log_scale ? std::exp(lo) : lo;
  r.upper = r.log_scale ? std::exp(hi) : hi;
  if (r.se > 0.0) {
    r.p_value = std::erfc(std::abs(stat_center / r.se) / std::sqrt(2.0));
  } else {
    r.lower = r.upper = r.estimate;
    r.p_value = stat_center == 0.0 ? 1.0 : 0.0;
    r.flag = "degenerate";
  }
  return r;
}

namespace {

MeasureReport suppressed_report(const WinMeasures& m, Measure measure, const std::string& method,
                                const std::string& flag) {
  MeasureReport r;
  r.method = method;
  r.measure = measure;
  r.estimate = measure_value(m, measure);
  r.se = r.lower = r.upper = r.p_value = kNaN;
  r.log_scale = measure == Measure::wr || measure == Measure::wo;
  r.flag = flag;
  return r;
}

std::vector<MeasureReport> reports_for(const WinTriple& t, const Eigen::Matrix3d& cov,
                                       double level, const std::string& method) {
  const WinMeasures m = win_measures(t);
  std::vector<MeasureReport> out;
  for (Measure measure : kAllMeasures) {
    const bool log_ok = measure == Measure::wr   ? (t.win > 0.0 && t.loss > 0.0)
                        : measure == Measure::wo ? (m.wo_finite && m.door > 0.0)
                                                 : true;
    out.push_back(log_ok ? measure_report(t, cov, measure, level, method)
                         : suppressed_report(m, measure, method, "suppressed"));
  }
  return out;
}

}  // namespace

TripleInfluence standard_influence(const TrialDataset& data, const WinTriple& triple) {
  const PatternTable table = outcome_patterns(data);
  const std::size_t P = table.patterns.size();
  const double n = static_cast<double>(data.size());
  const double n1 = static_cast<double>(data.arm_size(1));
  const double n0 = static_cast<double>(data.arm_size(0));
  // Per pattern: share of the opposite arm it beats and loses to, from the
  // treated perspective.
  std::vector<double> win_t(P, 0.0), loss_t(P, 0.0), win_c(P, 0.0), loss_c(P, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t q = 0; q < P; ++q) {
      const int o = compare_patterns(table.patterns[p], table.patterns[q]);
      if (o == 0) continue;
      const auto c0 = static_cast<double>(table.counts[q][0]);
      const auto c1 = static_cast<double>(table.counts[p][1]);
      (o > 0 ? win_t : loss_t)[p] += c0;
      (o > 0 ? win_c : loss_c)[q] += c1;
    }
  }
  TripleInfluence out;
  const auto N = static_cast<Eigen::Index>(data.size());
  out.win.resize(N);
  out.loss.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const std::size_t p = table.subject_pattern[static_cast<std::size_t>(i)];
    if (data[static_cast<std::size_t>(i)].arm == 1) {
      out.win(i) = (n / n1) * (win_t[p] / n0 - triple.win);
      out.loss(i) = (n / n1) * (loss_t[p] / n0 - triple.loss);
    } else {
      out.win(i) = (n / n0) * (win_c[p] / n1 - triple.win);
      out.loss(i) = (n / n0) * (loss_c[p] / n1 - triple.loss);
    }
  }
  out.tie = -out.win - out.loss;
  return out;
}

std::vector<MeasureReport> standard_variance(const TrialDataset& data, const WinTriple& triple,
                                             double level) {
  return reports_for(triple, covariance_triple(standard_influence(data, triple)), level,
                     std::string(to_string(Method::standard)));
}

Inference infer(const TrialDataset& data, const Estimate& e, double level) {
  Inference out;
  const std::string method(to_string(e.method));
  if (e.method == Method::standard) {
    out.influence.triple = standard_influence(data, e.triple);
  } else if (e.weights == WeightKind::hajek) {
    out.has_variance = false;
    out.covariance.setConstant(kNaN);
    for (Measure measure : kAllMeasures)
      out.reports.push_back(suppressed_report(e.measures, measure, method, "no-variance"));
    return out;
  } else {
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t k = 0; k < e.cells[a].size(); ++k) {
        out.influence.cells[a].push_back(
            e.method == Method::ipw
                ? ipw_cell_influence(data, e.propensities[a][k], e.cells[a][k])
                : aipw_cell_influence(data, e.propensities[a][k], e.outcomes[a][k], e.cells[a][k]));
      }
    }
    out.influence.triple = triple_influence(out.influence.cells, e.cells);
  }
  out.covariance = covariance_triple(out.influence.triple);
  if (!out.covariance.allFinite()) fail(Errc::non_finite, "non-finite influence values");
  out.reports = reports_for(e.triple, out.covariance, level, method);
  return out;
}

}  // namespace winstat
