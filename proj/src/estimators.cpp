#include "winstat/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "winstat/error.hpp"

namespace winstat {

namespace {

[[noreturn]] void fail(Errc code, const std::string& message) {
  throw Error(code, "estimators", message);
}

std::string where(int arm, int level) {
  return "(arm=" + std::to_string(arm) + ", level=" + std::to_string(level) + ")";
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::standard: return "standard";
    case Method::ipw: return "ipw";
    case Method::aipw: return "aipw";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view text) {
  if (text == "standard") return Method::standard;
  if (text == "ipw") return Method::ipw;
  if (text == "aipw") return Method::aipw;
  return std::nullopt;
}

void WeightSpec::validate() const {
  if (truncation && !(*truncation > 0.0 && *truncation < 0.5))
    fail(Errc::invalid_argument, "propensity flag threshold must lie in (0, 0.5)");
}

WinMeasures win_measures(const WinTriple& t) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  WinMeasures m;
  m.nb = t.win - t.loss;
  m.door = t.win + 0.5 * t.tie;
  m.wr_finite = t.loss > 0.0;
  m.wr = m.wr_finite ? t.win / t.loss : (t.win > 0.0 ? inf : nan);
  const double wo_den = t.loss + 0.5 * t.tie;
  m.wo_finite = wo_den > 0.0;
  m.wo = m.wo_finite ? m.door / wo_den : (m.door > 0.0 ? inf : nan);
  return m;
}

WinTriple assemble_triple(const CellTables& treated, const CellTables& control) {
  if (treated.empty() || treated.size() != control.size())
    fail(Errc::dimension_mismatch, "treated and control need the same number of levels");
  double win = 0.0;
  double loss = 0.0;
  for (std::size_t k = 0; k < treated.size(); ++k) {
    const CellTable& t1 = treated[k];
    const CellTable& t0 = control[k];
    if (t1.level != static_cast<int>(k + 1) || t0.level != static_cast<int>(k + 1) ||
        t1.supports != t0.supports || t1.size() != t0.size())
      fail(Errc::dimension_mismatch, "cell table shape mismatch at level " + std::to_string(k + 1));
    const auto width = static_cast<std::size_t>(t1.supports.back());
    for (std::size_t base = 0; base < t1.size(); base += width) {
      double below0 = 0.0;
      double above0 = 0.0;
      for (std::size_t i = 0; i < width; ++i) above0 += t0.probs[base + i];
      for (std::size_t i = 0; i < width; ++i) {
        above0 -= t0.probs[base + i];
        win += t1.probs[base + i] * below0;
        loss += t1.probs[base + i] * above0;
        below0 += t0.probs[base + i];
      }
    }
  }
  return WinTriple::from_win_loss(win, loss);
}

// --- standard -------------------------------------------------------------------

PatternTable outcome_patterns(const TrialDataset& data) {
  std::map<std::vector<int>, std::size_t> index;
  PatternTable table;
  table.subject_pattern.reserve(data.size());
  const int K = data.hierarchy().endpoints();
  std::vector<int> key(static_cast<std::size_t>(K));
  for (const Subject& s : data.subjects()) {
    for (int k = 0; k < K; ++k) key[static_cast<std::size_t>(k)] = s.outcomes[static_cast<std::size_t>(k)].value_or(-1);
    auto [it, inserted] = index.try_emplace(key, table.patterns.size());
    if (inserted) {
      table.patterns.push_back(key);
      table.counts.push_back({0, 0});
    }
    ++table.counts[it->second][static_cast<std::size_t>(s.arm)];
    table.subject_pattern.push_back(it->second);
  }
  return table;
}

int compare_patterns(std::span<const int> treated, std::span<const int> control) {
  for (std::size_t k = 0; k < treated.size(); ++k) {
    if (treated[k] < 0 || control[k] < 0) continue;
    if (treated[k] > control[k]) return 1;
    if (treated[k] < control[k]) return -1;
  }
  return 0;
}

PairwiseResult standard_pairwise(const TrialDataset& data) {
  const PatternTable table = outcome_patterns(data);
  PairwiseResult r;
  for (std::size_t p = 0; p < table.patterns.size(); ++p) {
    if (table.counts[p][1] == 0) continue;
    for (std::size_t q = 0; q < table.patterns.size(); ++q) {
      if (table.counts[q][0] == 0) continue;
      const int outcome = compare_patterns(table.patterns[p], table.patterns[q]);
      const std::uint64_t n = table.counts[p][1] * table.counts[q][0];
      if (outcome > 0) r.wins += n;
      if (outcome < 0) r.losses += n;
    }
  }
  r.pairs = static_cast<std::uint64_t>(data.arm_size(1)) * data.arm_size(0);
  if (r.pairs == 0) fail(Errc::single_arm, "both arms must be nonempty");
  const double pairs = static_cast<double>(r.pairs);
  r.triple = WinTriple::from_win_loss(static_cast<double>(r.wins) / pairs,
                                      static_cast<double>(r.losses) / pairs);
  r.measures = win_measures(r.triple);
  return r;
}

// --- weighting ------------------------------------------------------------------

double Propensity::pi(const Subject& subject) const {
  return fit ? predict_pi(*fit, subject) : 1.0;
}

Propensity fit_propensity(const TrialDataset& data, int arm, int level,
                          const CovariateSelector& covariates) {
  std::size_t observed = 0;
  for (const Subject& s : data.subjects())
    if (s.arm == arm && joint_nonmiss(s, level)) ++observed;
  if (observed == 0)
    fail(Errc::no_complete_cases, "no complete cases " + where(arm, level));
  Propensity p{arm, level, std::nullopt};
  if (observed < data.arm_size(arm)) p.fit = fit_logistic(data, arm, level, covariates);
  return p;
}

std::vector<double> ipw_weights(const TrialDataset& data, const Propensity& propensity) {
  const double arm_share = static_cast<double>(data.arm_size(propensity.arm)) / static_cast<double>(data.size());
  std::vector<double> w(data.size(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Subject& s = data[i];
    if (s.arm != propensity.arm || !joint_nonmiss(s, propensity.level)) continue;
    const double pi = propensity.pi(s);
    if (!(pi > 0.0))
      fail(Errc::non_finite, "fitted propensity is 0 for subject " + std::to_string(i) + " " +
                                 where(propensity.arm, propensity.level));
    w[i] = 1.0 / (arm_share * pi);
  }
  return w;
}

namespace {

void check_propensity(const Propensity& propensity) {
  if (propensity.fit && !propensity.fit->converged)
    fail(Errc::not_converged, "missingness model did not converge " +
                                  where(propensity.arm, propensity.level));
}

CellTable empty_table(const Hierarchy& h, int arm, int level) {
  CellTable t;
  t.arm = arm;
  t.level = level;
  t.supports.assign(h.supports().begin(), h.supports().begin() + level);
  t.probs.assign(h.cell_count(level), 0.0);
  return t;
}

}  // namespace

CellTable ipw_cells(const TrialDataset& data, const Propensity& propensity,
                    const WeightSpec& weights) {
  check_propensity(propensity);
  const Hierarchy& h = data.hierarchy();
  CellTable t = empty_table(h, propensity.arm, propensity.level);
  const std::vector<double> w = ipw_weights(data, propensity);
  for (std::size_t i = 0; i < data.size(); ++i)
    if (w[i] != 0.0) t.probs[*prefix_cell(h, data[i], propensity.level)] += w[i];
  const double n = static_cast<double>(data.size());
  for (double& p : t.probs) p /= n;
  if (weights.kind == WeightKind::hajek) {
    const double total = t.total();
    for (double& p : t.probs) p /= total;
  }
  return t;
}

CellTable aipw_cells(const TrialDataset& data, const Propensity& propensity,
                     const MultinomialFit& outcome) {
  check_propensity(propensity);
  if (!outcome.converged)
    fail(Errc::not_converged, "outcome model did not converge " + where(outcome.arm, outcome.level));
  const Hierarchy& h = data.hierarchy();
  if (outcome.arm != propensity.arm || outcome.level != propensity.level ||
      outcome.cell_count != h.cell_count(propensity.level))
    fail(Errc::dimension_mismatch, "outcome model does not match the cell table " +
                                       where(propensity.arm, propensity.level));
  CellTable t = empty_table(h, propensity.arm, propensity.level);
  const std::vector<double> w = ipw_weights(data, propensity);
  Eigen::Map<Eigen::VectorXd> probs(t.probs.data(), static_cast<Eigen::Index>(t.probs.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Eigen::VectorXd mu = predict_mu(outcome, data[i]);
    probs += (1.0 - w[i]) * mu;
    if (w[i] != 0.0) probs(static_cast<Eigen::Index>(*prefix_cell(h, data[i], propensity.level))) += w[i];
  }
  probs /= static_cast<double>(data.size());
  return t;
}

// --- orchestration --------------------------------------------------------------

namespace {

PropensitySummary summarize(const TrialDataset& data, const Propensity& p,
                            const WeightSpec& weights) {
  PropensitySummary s;
  s.arm = p.arm;
  s.level = p.level;
  s.modeled = p.modeled();
  s.min_pi = 1.0;
  s.max_pi = 0.0;
  double weight_total = 0.0;
  const double threshold = weights.flag_threshold();
  const double arm_share = static_cast<double>(data.arm_size(p.arm)) / static_cast<double>(data.size());
  for (const Subject& subject : data.subjects()) {
    if (subject.arm != p.arm) continue;
    const double pi = p.pi(subject);
    s.min_pi = std::min(s.min_pi, pi);
    s.max_pi = std::max(s.max_pi, pi);
    if (pi < threshold) ++s.below_threshold;
    const auto bin = std::min<std::size_t>(static_cast<std::size_t>(pi * 20.0), 19);
    ++s.histogram[bin];
    if (joint_nonmiss(subject, p.level)) weight_total += 1.0 / (arm_share * pi);
  }
  s.normalizer = weight_total / static_cast<double>(data.size());
  return s;
}

void append(std::vector<std::string>& to, const std::vector<std::string>& from) {
  to.insert(to.end(), from.begin(), from.end());
}

}  // namespace

Estimate estimate(const TrialDataset& data, Method method, const ModelSpec& models,
                  const WeightSpec& weights) {
  weights.validate();
  Estimate e;
  e.method = method;
  e.weights = weights.kind;
  append(e.diagnostics.warnings, data.hierarchy().warnings());

  if (method == Method::standard) {
    const PairwiseResult r = standard_pairwise(data);
    e.triple = r.triple;
    e.measures = r.measures;
    return e;
  }
  if (method == Method::aipw && weights.kind == WeightKind::hajek)
    fail(Errc::invalid_argument, "Hajek weights apply to the ipw method only");

  const int K = data.hierarchy().endpoints();
  for (int a = 0; a < 2; ++a) {
    for (int k = 1; k <= K; ++k) {
      Propensity p = fit_propensity(data, a, k, models.missingness);
      if (p.fit) append(e.diagnostics.warnings, p.fit->warnings);
      PropensitySummary s = summarize(data, p, weights);
      if (s.below_threshold > 0)
        e.diagnostics.warnings.push_back(std::to_string(s.below_threshold) +
                                         " fitted propensities below " +
                                         std::to_string(weights.flag_threshold()) + " " + where(a, k));
      e.diagnostics.propensity.push_back(s);
      if (method == Method::ipw) {
        e.cells[static_cast<std::size_t>(a)].push_back(ipw_cells(data, p, weights));
      } else {
        MultinomialFit m = fit_multinomial(data, a, k, models.outcome);
        append(e.diagnostics.warnings, m.warnings);
        e.cells[static_cast<std::size_t>(a)].push_back(aipw_cells(data, p, m));
        e.outcomes[static_cast<std::size_t>(a)].push_back(std::move(m));
      }
      e.propensities[static_cast<std::size_t>(a)].push_back(std::move(p));
    }
  }
  e.triple = assemble_triple(e.cells[1], e.cells[0]);
  if (!std::isfinite(e.triple.win) || !std::isfinite(e.triple.loss))
    fail(Errc::non_finite, "non-finite win or loss probability");
  e.measures = win_measures(e.triple);
  if (!e.measures.wr_finite) e.diagnostics.warnings.push_back("loss probability is 0; win ratio is not finite");
  return e;
}

}  // namespace winstat
