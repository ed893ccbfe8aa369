#include "winstat/simulation.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "winstat/error.hpp"

namespace winstat {

namespace {

[[noreturn]] void fail(Errc code, const std::string& message) {
  throw Error(code, "simulation", message);
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

bool bernoulli(Rng& rng, double p) { return uniform(rng) < p; }

double standard_logistic(Rng& rng) {
  double u = uniform(rng);
  while (u <= 0.0) u = uniform(rng);
  return std::log(u / (1.0 - u));
}

struct Quadrature {
  std::vector<double> nodes;    // standard normal abscissae
  std::vector<double> weights;  // sum to 1
};

// Gauss-Hermite rule for E[f(Z)], Z ~ N(0,1), via the Golub-Welsch eigenproblem.
const Quadrature& normal_quadrature() {
  static const Quadrature q = [] {
    constexpr int m = 64;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
    for (int k = 1; k < m; ++k) J(k - 1, k) = J(k, k - 1) = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    Quadrature out;
    for (int i = 0; i < m; ++i) {
      out.nodes.push_back(std::sqrt(2.0) * eig.eigenvalues()(i));
      out.weights.push_back(eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i));
    }
    return out;
  }();
  return q;
}

// E[g(X1, X2)] with X1 ~ N(0,1), X2 ~ Bern(0.5).
template <class F>
double covariate_expectation(F&& g) {
  const Quadrature& q = normal_quadrature();
  double total = 0.0;
  for (int x2 = 0; x2 < 2; ++x2)
    for (std::size_t i = 0; i < q.nodes.size(); ++i) total += 0.5 * q.weights[i] * g(q.nodes[i], x2);
  return total;
}

double linear_y1(double x1, double x2, int a) {
  return 1.5 + x1 + 2.0 * x2 + a * (0.6 + 0.2 * x1 + 0.25 * x2);
}

double linear_y2(double x1, double x2, int a) {
  return 1.1 + 1.4 * x1 + x2 + a * (0.4 + 0.5 * x1 + 0.75 * x2);
}

struct Setting2Draw {
  int arm;
  int y1;
  int y2;
  double x1;
  double x2;
};

Setting2Draw draw_setting2(Rng& rng) {
  Setting2Draw d{};
  d.x1 = std::normal_distribution<double>(0.0, 1.0)(rng);
  d.x2 = bernoulli(rng, 0.5) ? 1.0 : 0.0;
  d.arm = bernoulli(rng, 0.5) ? 1 : 0;
  const double y1 = linear_y1(d.x1, d.x2, d.arm) + standard_logistic(rng);
  const double y2 = linear_y2(d.x1, d.x2, d.arm) + standard_logistic(rng);
  d.y1 = y1 > 0.0 ? 1 : 0;
  d.y2 = y2 <= -1.0 ? 0 : (y2 <= 1.0 ? 1 : 2);
  return d;
}

CellTables tables_from_level2(int arm, const std::vector<int>& supports, std::vector<double> probs) {
  CellTable top{arm, 2, supports, std::move(probs)};
  return {marginalize_cells(top), top};
}

}  // namespace

// --- seeding ----------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t child_seed(std::uint64_t base, std::uint64_t replicate) noexcept {
  return splitmix64(splitmix64(base) ^ (replicate + 0x9E3779B97F4A7C15ULL));
}

std::string_view to_string(Variant variant) {
  return variant == Variant::null ? "null" : "notable";
}

// --- scenarios --------------------------------------------------------------------

const std::vector<Scenario>& builtin_scenarios() {
  static const std::vector<Scenario> scenarios{
      {"I", "No missing data", {0, 0, 0, 0}},
      {"II", "HM, Y1 only (20%, both groups)", {0.2, 0.2, 0, 0}},
      {"III", "HM, Y2 only (20%, both groups)", {0, 0, 0.2, 0.2}},
      {"IV", "HM, Y1 and Y2 (20%, both groups)", {0.2, 0.2, 0.2, 0.2}},
      {"V", "HT, Y1 only (30% treated, 10% control)", {0.1, 0.3, 0, 0}},
      {"VI", "HT, Y2 only (30% treated, 10% control)", {0, 0, 0.1, 0.3}},
      {"VII", "HT, Y1 and Y2 (30% treated, 10% control)", {0.1, 0.3, 0.1, 0.3}},
  };
  return scenarios;
}

const Scenario& find_scenario(std::string_view id) {
  for (const Scenario& s : builtin_scenarios())
    if (s.id == id) return s;
  fail(Errc::invalid_argument, "unknown scenario '" + std::string(id) + "' (expected I..VII)");
}

// --- generation -------------------------------------------------------------------

std::array<double, 4> setting1_law(int arm, Variant variant) {
  // Quoted best to worst: (1,1), (1,0), (0,1), (0,0).
  std::array<double, 4> quoted;
  if (arm == 0) {
    quoted = {0.313, 0.268, 0.048, 0.373};
    const double total = quoted[0] + quoted[1] + quoted[2] + quoted[3];
    for (double& p : quoted) p /= total;
  } else if (variant == Variant::null) {
    quoted = {0.26, 0.12, 0.47, 0.15};
  } else {
    quoted = {0.5, 0.1, 0.2, 0.2};
  }
  return {quoted[3], quoted[2], quoted[1], quoted[0]};
}

TrialDataset gen_setting1(std::size_t n, Variant variant, Rng& rng) {
  const std::array<std::array<double, 4>, 2> law{setting1_law(0, variant), setting1_law(1, variant)};
  std::vector<Subject> subjects(n);
  for (Subject& s : subjects) {
    s.arm = bernoulli(rng, 0.5) ? 1 : 0;
    const double u = uniform(rng);
    const auto& p = law[static_cast<std::size_t>(s.arm)];
    int cell = 3;
    double cumulative = 0.0;
    for (int c = 0; c < 3; ++c) {
      cumulative += p[static_cast<std::size_t>(c)];
      if (u < cumulative) {
        cell = c;
        break;
      }
    }
    s.outcomes = {cell / 2, cell % 2};
  }
  return TrialDataset(Hierarchy({2, 2}), std::move(subjects));
}

TrialDataset gen_setting2(std::size_t n, Rng& rng) {
  std::vector<Subject> subjects(n);
  for (Subject& s : subjects) {
    const Setting2Draw d = draw_setting2(rng);
    s.arm = d.arm;
    s.outcomes = {d.y1, d.y2};
    s.covariates = {d.x1, d.x2};
  }
  return TrialDataset(Hierarchy({2, 3}), std::move(subjects), {"X1", "X2"});
}

Slopes setting2_slopes(int endpoint, int arm) {
  static constexpr Slopes table[2][2] = {{{0.5, 1.0}, {1.0, 1.0}}, {{1.0, 0.5}, {1.0, 1.0}}};
  if (endpoint < 0 || endpoint > 1 || arm < 0 || arm > 1)
    fail(Errc::out_of_range, "slopes exist for endpoints 0..1 and arms 0..1");
  return table[endpoint][arm];
}

double calibrate_intercept(Slopes slopes, double target) {
  if (!(target > 0.0 && target < 1.0)) fail(Errc::invalid_argument, "target must lie in (0, 1)");
  auto marginal = [&](double alpha) {
    return covariate_expectation(
        [&](double x1, int x2) { return expit(alpha + slopes.x1 * x1 + slopes.x2 * x2); });
  };
  double lo = -20.0;
  double hi = 20.0;
  if (marginal(lo) > target || marginal(hi) < target)
    fail(Errc::invalid_argument, "target marginal unreachable on [-20, 20]");
  double mid = 0.0;
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    const double err = marginal(mid) - target;
    if (std::abs(err) < 1e-6 && hi - lo < 1e-9) break;
    (err < 0.0 ? lo : hi) = mid;
  }
  return mid;
}

TrialDataset inject_missingness(const TrialDataset& data, const Scenario& scenario,
                                Mechanism mechanism, Rng& rng) {
  const int K = data.hierarchy().endpoints();
  if (K > 2) fail(Errc::invalid_argument, "scenarios cover two endpoints");
  for (double r : scenario.rates)
    if (!(r >= 0.0 && r < 1.0)) fail(Errc::invalid_argument, "missingness rates must lie in [0, 1)");
  if (mechanism == Mechanism::covariate && data.covariate_count() < 2)
    fail(Errc::missing_covariate, "covariate mechanism needs X1 and X2");

  double alpha[2][2] = {{0, 0}, {0, 0}};
  if (mechanism == Mechanism::covariate)
    for (int k = 0; k < K; ++k)
      for (int a = 0; a < 2; ++a)
        if (scenario.rate(k, a) > 0.0)
          alpha[k][a] = calibrate_intercept(setting2_slopes(k, a), 1.0 - scenario.rate(k, a));

  std::vector<Subject> subjects(data.subjects().begin(), data.subjects().end());
  for (Subject& s : subjects) {
    for (int k = 0; k < K; ++k) {
      const double rate = scenario.rate(k, s.arm);
      double p_missing = rate;
      if (mechanism == Mechanism::covariate && rate > 0.0) {
        const Slopes g = setting2_slopes(k, s.arm);
        p_missing = 1.0 - expit(alpha[k][s.arm] + g.x1 * s.covariates[0] + g.x2 * s.covariates[1]);
      }
      const double u = uniform(rng);
      if (rate > 0.0 && u < p_missing) s.outcomes[static_cast<std::size_t>(k)].reset();
    }
  }
  return TrialDataset(data.hierarchy(), std::move(subjects), data.covariate_names());
}

// --- truths -----------------------------------------------------------------------

PopulationCells setting1_population(Variant variant) {
  PopulationCells out;
  for (int a = 0; a < 2; ++a) {
    const auto law = setting1_law(a, variant);
    out[static_cast<std::size_t>(a)] = tables_from_level2(a, {2, 2}, {law.begin(), law.end()});
  }
  return out;
}

PopulationCells setting2_population() {
  PopulationCells out;
  for (int a = 0; a < 2; ++a) {
    std::vector<double> probs(6, 0.0);
    for (int y1 = 0; y1 < 2; ++y1) {
      for (int y2 = 0; y2 < 3; ++y2) {
        probs[static_cast<std::size_t>(y1 * 3 + y2)] = covariate_expectation([&](double x1, int x2) {
          const double p1 = expit(linear_y1(x1, x2, a));
          const double l2 = linear_y2(x1, x2, a);
          const double upper = expit(l2 - 1.0);  // P(Y2 = 2)
          const double mid = expit(l2 + 1.0);    // P(Y2 >= 1)
          const double py2 = y2 == 2 ? upper : (y2 == 1 ? mid - upper : 1.0 - mid);
          return (y1 == 1 ? p1 : 1.0 - p1) * py2;
        });
      }
    }
    out[static_cast<std::size_t>(a)] = tables_from_level2(a, {2, 3}, std::move(probs));
  }
  return out;
}

WinTriple truth_triple_setting1(Variant variant) {
  const PopulationCells p = setting1_population(variant);
  return assemble_triple(p[1], p[0]);
}

WinMeasures truth_setting1(Variant variant) { return win_measures(truth_triple_setting1(variant)); }

WinTriple truth_triple_setting2() {
  const PopulationCells p = setting2_population();
  return assemble_triple(p[1], p[0]);
}

WinMeasures truth_setting2() { return win_measures(truth_triple_setting2()); }

WinTriple sampled_triple_setting2(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::array<std::array<std::uint64_t, 6>, 2> counts{};
  for (std::size_t i = 0; i < n; ++i) {
    const Setting2Draw d = draw_setting2(rng);
    ++counts[static_cast<std::size_t>(d.arm)][static_cast<std::size_t>(d.y1 * 3 + d.y2)];
  }
  PopulationCells cells;
  for (int a = 0; a < 2; ++a) {
    const auto& c = counts[static_cast<std::size_t>(a)];
    double total = 0.0;
    for (auto v : c) total += static_cast<double>(v);
    if (total == 0.0) fail(Errc::single_arm, "sample drew a single arm");
    std::vector<double> probs;
    for (auto v : c) probs.push_back(static_cast<double>(v) / total);
    cells[static_cast<std::size_t>(a)] = tables_from_level2(a, {2, 3}, std::move(probs));
  }
  return assemble_triple(cells[1], cells[0]);
}

WinTriple expected_standard_triple(const PopulationCells& population, const Scenario& scenario) {
  struct Pattern {
    std::vector<int> values;
    double prob;
  };
  std::array<std::vector<Pattern>, 2> patterns;
  for (int a = 0; a < 2; ++a) {
    const CellTable& top = population[static_cast<std::size_t>(a)].back();
    const int K = top.level;
    if (K > 2) fail(Errc::invalid_argument, "scenarios cover two endpoints");
    for (std::size_t cell = 0; cell < top.size(); ++cell) {
      std::vector<int> values(static_cast<std::size_t>(K));
      std::size_t rest = cell;
      for (int k = K - 1; k >= 0; --k) {
        const auto l = static_cast<std::size_t>(top.supports[static_cast<std::size_t>(k)]);
        values[static_cast<std::size_t>(k)] = static_cast<int>(rest % l);
        rest /= l;
      }
      for (unsigned mask = 0; mask < (1u << K); ++mask) {
        double prob = top.probs[cell];
        std::vector<int> seen = values;
        for (int k = 0; k < K; ++k) {
          const double r = scenario.rate(k, a);
          if (mask & (1u << k)) {
            prob *= r;
            seen[static_cast<std::size_t>(k)] = -1;
          } else {
            prob *= 1.0 - r;
          }
        }
        if (prob > 0.0) patterns[static_cast<std::size_t>(a)].push_back({seen, prob});
      }
    }
  }
  double win = 0.0;
  double loss = 0.0;
  for (const Pattern& t : patterns[1]) {
    for (const Pattern& c : patterns[0]) {
      const int o = compare_patterns(t.values, c.values);
      if (o > 0) win += t.prob * c.prob;
      if (o < 0) loss += t.prob * c.prob;
    }
  }
  return WinTriple::from_win_loss(win, loss);
}

// --- Monte Carlo --------------------------------------------------------------------

std::string MethodVariant::label() const {
  std::string name = method == Method::standard ? "Standard" : method == Method::ipw ? "IPW" : "AIPW";
  return spec.empty() ? name : name + "-" + spec;
}

ModelSpec MethodVariant::models() const {
  const CovariateSelector both{0, 1};
  const CovariateSelector x2_only{1};
  if (spec.empty()) return {};
  if (spec == "A") return {both, both};
  if (spec == "B") return {x2_only, both};
  if (spec == "C") return {both, x2_only};
  fail(Errc::invalid_argument, "model specification must be A, B or C");
}

std::vector<MethodVariant> default_methods(Setting setting) {
  if (setting == Setting::one) return {{Method::standard, ""}, {Method::ipw, ""}};
  return {{Method::standard, ""}, {Method::ipw, "A"},  {Method::ipw, "B"},
          {Method::aipw, "A"},    {Method::aipw, "B"}, {Method::aipw, "C"}};
}

void ScenarioSpec::validate() const {
  if (sample_size < 50) fail(Errc::invalid_argument, "sample size must be at least 50");
  if (replicates < 1) fail(Errc::invalid_argument, "at least one replicate required");
  for (double r : scenario.rates)
    if (!(r >= 0.0 && r < 1.0)) fail(Errc::invalid_argument, "missingness rates must lie in [0, 1)");
  critical_value(level);
}

MetricsRow metrics(std::span<const double> est, std::span<const double> lower,
                   std::span<const double> upper, double truth) {
  const std::size_t m = est.size();
  if (m == 0) fail(Errc::invalid_argument, "no successful replicates");
  if (lower.size() != m || upper.size() != m) fail(Errc::dimension_mismatch, "interval count mismatch");
  const double M = static_cast<double>(m);
  MetricsRow row;
  row.truth = truth;
  row.replicates = m;
  double sum = 0.0, sq = 0.0, covered = 0.0, width = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    sum += est[r];
    sq += (est[r] - truth) * (est[r] - truth);
    if (lower[r] <= truth && truth <= upper[r]) covered += 1.0;
    width += upper[r] - lower[r];
  }
  row.mean = sum / M;
  row.bias = row.mean - truth;
  const double mse = sq / M;
  row.rmse = std::sqrt(mse);
  row.cp = covered / M;
  row.ciw = width / M;

  double var_est = 0.0, var_sq = 0.0, var_w = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const double d = est[r] - truth;
    var_est += (est[r] - row.mean) * (est[r] - row.mean);
    var_sq += (d * d - mse) * (d * d - mse);
    var_w += (upper[r] - lower[r] - row.ciw) * (upper[r] - lower[r] - row.ciw);
  }
  const double denom = m > 1 ? M - 1.0 : 1.0;
  row.se_mean = std::sqrt(var_est / denom / M);
  row.se_rmse = row.rmse > 0.0 ? std::sqrt(var_sq / denom / M) / (2.0 * row.rmse) : 0.0;
  row.se_cp = std::sqrt(row.cp * (1.0 - row.cp) / M);
  row.se_ciw = std::sqrt(var_w / denom / M);
  return row;
}

WinMeasures scenario_truth(const ScenarioSpec& spec) {
  return spec.setting == Setting::one ? truth_setting1(spec.variant) : truth_setting2();
}

unsigned default_threads() {
  if (const char* env = std::getenv("WINSTAT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 1024) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

struct Draw {
  bool ok = false;
  double estimate = kNaN;
  double lower = kNaN;
  double upper = kNaN;
};

using ReplicateDraws = std::vector<std::array<Draw, 4>>;  // per method, per measure

ReplicateDraws run_replicate(const ScenarioSpec& spec, const std::vector<MethodVariant>& methods,
                             std::size_t r) {
  ReplicateDraws out(methods.size());
  Rng rng(child_seed(spec.seed, r));
  std::optional<TrialDataset> data;
  try {
    TrialDataset full = spec.setting == Setting::one
                            ? gen_setting1(spec.sample_size, spec.variant, rng)
                            : gen_setting2(spec.sample_size, rng);
    data.emplace(inject_missingness(
        full, spec.scenario, spec.setting == Setting::one ? Mechanism::mcar : Mechanism::covariate, rng));
  } catch (const Error&) {
    return out;  // e.g. a single-arm draw; every method fails
  }
  for (std::size_t m = 0; m < methods.size(); ++m) {
    try {
      const Estimate e = estimate(*data, methods[m].method, methods[m].models());
      const Inference inf = infer(*data, e, spec.level);
      for (std::size_t j = 0; j < inf.reports.size(); ++j) {
        const MeasureReport& rep = inf.reports[j];
        Draw& d = out[m][j];
        d.estimate = rep.estimate;
        d.lower = rep.lower;
        d.upper = rep.upper;
        d.ok = std::isfinite(rep.estimate) && std::isfinite(rep.lower) && std::isfinite(rep.upper);
      }
    } catch (const Error&) {
      // recorded as a failure for every measure of this method
    }
  }
  return out;
}

}  // namespace

std::vector<MetricsRow> run_monte_carlo(const ScenarioSpec& spec,
                                        const std::vector<MethodVariant>& methods,
                                        unsigned threads) {
  spec.validate();
  if (methods.empty()) fail(Errc::invalid_argument, "no methods requested");
  for (const MethodVariant& m : methods) m.models();  // validates the spec label
  const WinMeasures truth = scenario_truth(spec);

  std::vector<ReplicateDraws> results(spec.replicates);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= spec.replicates) return;
      try {
        results[r] = run_replicate(spec, methods, r);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = spec.replicates;
        return;
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1u, threads));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(workers, spec.replicates); ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  std::vector<MetricsRow> rows;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (std::size_t j = 0; j < kAllMeasures.size(); ++j) {
      std::vector<double> est, lo, hi;
      for (const ReplicateDraws& rep : results) {
        const Draw& d = rep[m][j];
        if (!d.ok) continue;
        est.push_back(d.estimate);
        lo.push_back(d.lower);
        hi.push_back(d.upper);
      }
      const double t = measure_value(truth, kAllMeasures[j]);
      MetricsRow row;
      if (est.empty()) {
        row.truth = t;
        row.mean = row.bias = row.rmse = row.cp = row.ciw = kNaN;
        row.se_mean = row.se_rmse = row.se_cp = row.se_ciw = kNaN;
      } else {
        row = metrics(est, lo, hi, t);
      }
      row.scenario = spec.scenario.id;
      row.method = methods[m].label();
      row.measure = kAllMeasures[j];
      row.failures = spec.replicates - est.size();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace winstat
