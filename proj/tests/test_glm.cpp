#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "winstat/error.hpp"
#include "winstat/glm.hpp"
#include "winstat/simulation.hpp"

using namespace winstat;

namespace {

Subject make(int arm, std::vector<std::optional<int>> y, std::vector<double> x = {}) {
  return {arm, std::move(y), std::move(x)};
}

/// Treated arm of m subjects, the first `observed` of them complete; a few
/// complete controls.
TrialDataset intercept_fixture(int m, int observed) {
  std::vector<Subject> s;
  for (int i = 0; i < m; ++i) s.push_back(make(1, {i < observed ? std::optional<int>(1) : std::nullopt}));
  for (int i = 0; i < 4; ++i) s.push_back(make(0, {i % 2}));
  return TrialDataset(Hierarchy({2}), std::move(s));
}

/// Treated subjects with two normal covariates and R ~ expit(0.3 + 0.5 x1 + x2).
TrialDataset logistic_fixture(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  std::vector<Subject> s;
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = z(rng), x2 = z(rng);
    const bool r = u(rng) < oracle::expit(0.3 + 0.5 * x1 + 1.0 * x2);
    s.push_back(make(1, {r ? std::optional<int>(1) : std::nullopt}, {x1, x2}));
  }
  s.push_back(make(0, {0}, {0.0, 0.0}));
  return TrialDataset(Hierarchy({2}), std::move(s), {"x1", "x2"});
}

}  // namespace

TEST_CASE("expit is stable in both tails") {
  CHECK(expit(0.0) == 0.5);
  const double tiny = expit(-50.0);
  CHECK(tiny > 0.0);
  CHECK(tiny < 1e-20);
  CHECK(expit(-700.0) > 0.0);
  CHECK(expit(700.0) == 1.0);
  CHECK(std::isfinite(expit(-800.0)));
}

TEST_CASE("intercept-only logistic fit recovers logit of the observed share") {
  const TrialDataset d = intercept_fixture(100, 80);
  const LogisticFit f = fit_logistic(d, 1, 1, {});
  CHECK(f.converged);
  CHECK(f.coefficients[0] == doctest::Approx(std::log(4.0)).epsilon(1e-10));
  CHECK(predict_pi(f, d[0]) == doctest::Approx(0.8).epsilon(1e-10));
  CHECK(f.sample_size == 104);
}

TEST_CASE("logistic fit errors") {
  SUBCASE("all observed is separation") {
    const TrialDataset d = intercept_fixture(10, 10);
    try {
      fit_logistic(d, 1, 1, {});
      FAIL("expected separation");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::separation);
    }
  }
  SUBCASE("perfect split on a covariate is separation") {
    std::vector<Subject> s;
    for (int i = 0; i < 20; ++i) s.push_back(make(1, {i < 10 ? std::optional<int>(1) : std::nullopt}, {i < 10 ? 1.0 + i : -1.0 - i}));
    s.push_back(make(0, {0}, {0.0}));
    const TrialDataset d(Hierarchy({2}), std::move(s), {"x"});
    CHECK_THROWS_AS(fit_logistic(d, 1, 1, {0}), Error);
  }
  SUBCASE("too few subjects or collinear columns are rank deficient") {
    const TrialDataset small = intercept_fixture(2, 1);
    try {
      fit_logistic(small, 1, 1, {});
      FAIL("expected rank deficiency");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::rank_deficient);
    }
    std::vector<Subject> s;
    for (int i = 0; i < 20; ++i) s.push_back(make(1, {i % 3 ? std::optional<int>(1) : std::nullopt}, {double(i), 2.0 * i}));
    s.push_back(make(0, {0}, {0.0, 0.0}));
    const TrialDataset d(Hierarchy({2}), std::move(s), {"a", "b"});
    CHECK_THROWS_AS(fit_logistic(d, 1, 1, {0, 1}), Error);
  }
}

TEST_CASE("logistic fit agrees with an independent Newton oracle") {
  const TrialDataset d = logistic_fixture(2024, 200);
  const LogisticFit f = fit_logistic(d, 1, 1, {0, 1});
  std::vector<std::vector<double>> X;
  std::vector<int> R;
  for (const Subject& s : d.subjects()) {
    if (s.arm != 1) continue;
    X.push_back({1.0, s.covariates[0], s.covariates[1]});
    R.push_back(joint_nonmiss(s, 1) ? 1 : 0);
  }
  const std::vector<double> beta = oracle::newton_logistic(X, R);
  const Eigen::MatrixXd cov = f.information.inverse();
  const double truth[3] = {0.3, 0.5, 1.0};
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(f.coefficients[j] - beta[static_cast<std::size_t>(j)]) < 1e-6);
    CHECK(std::abs(f.coefficients[j] - truth[j]) < 3.0 * std::sqrt(cov(j, j)));
  }
  CHECK(logistic_score(d, 1, 1, {0, 1}, f.coefficients).lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK(f.max_score < 1e-6);
}

TEST_CASE("logistic score is the gradient of the log-likelihood") {
  const TrialDataset d = logistic_fixture(7, 120);
  Eigen::VectorXd beta(3);
  beta << 0.1, -0.4, 0.7;
  const Eigen::VectorXd score = logistic_score(d, 1, 1, {0, 1}, beta);
  for (int j = 0; j < 3; ++j) {
    const double fd = oracle::central_difference(
        [&](double t) {
          Eigen::VectorXd b = beta;
          b[j] = t;
          return logistic_loglik(d, 1, 1, {0, 1}, b);
        },
        beta[j]);
    CHECK(fd == doctest::Approx(score[j]).epsilon(1e-6));
  }
}

TEST_CASE("predict_pi") {
  LogisticFit f;
  f.covariates = {0, 1};
  f.coefficients = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd x(3);
  x << 1.0, 4.0, -9.0;
  CHECK(predict_pi(f, x) == 0.5);
  f.coefficients = Eigen::Vector3d(-50.0, 0.0, 0.0);
  const double p = predict_pi(f, x);
  CHECK(p > 0.0);
  CHECK(p < 1e-20);
  CHECK_THROWS_AS(predict_pi(f, Eigen::VectorXd::Ones(2)), Error);

  LogisticFit g;
  g.coefficients = Eigen::VectorXd::Constant(1, 1.3863);
  CHECK(predict_pi(g, Eigen::VectorXd::Ones(1)) == doctest::Approx(0.8).epsilon(1e-4));
}

TEST_CASE("logistic influence") {
  // m = 10 treated subjects, 8 observed; 4 controls, so n = 14.
  const TrialDataset d = intercept_fixture(10, 8);
  const LogisticFit f = fit_logistic(d, 1, 1, {});
  const double p = 0.8, m = 10.0, n = 14.0;
  const double j_avg = p * (1 - p) * m / n;
  CHECK(f.average_information_inverse(0, 0) == doctest::Approx(1.0 / j_avg).epsilon(1e-10));
  CHECK(logistic_influence(f, d[0])[0] == doctest::Approx((1 - p) / j_avg).epsilon(1e-10));
  CHECK(logistic_influence(f, d[9])[0] == doctest::Approx(-p / j_avg).epsilon(1e-10));
  CHECK(logistic_influence(f, d[12]).isZero());

  const TrialDataset big = logistic_fixture(11, 150);
  const LogisticFit g = fit_logistic(big, 1, 1, {0, 1});
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
  for (const Subject& s : big.subjects()) mean += logistic_influence(g, s);
  mean /= static_cast<double>(big.size());
  CHECK(mean.lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("information inversion") {
  Eigen::Matrix2d m;
  m << 2, 1, 1, 2;
  const SymmetricInverse inv = invert_information(m, "test");
  CHECK_FALSE(inv.pseudo);
  CHECK((inv.inverse * m - Eigen::Matrix2d::Identity()).norm() < 1e-12);
  Eigen::Matrix2d rank1;
  rank1 << 1, 1, 1, 1;
  CHECK(invert_information(rank1, "test").pseudo);
  CHECK_THROWS_AS(invert_information(Eigen::Matrix2d::Zero(), "test"), Error);
}

TEST_CASE("multinomial intercept-only fit reproduces complete-case proportions") {
  // Treated level-1 cells 0,1,2 with counts 2,3,5 and two incomplete subjects.
  std::vector<Subject> s;
  for (int i = 0; i < 2; ++i) s.push_back(make(1, {0}));
  for (int i = 0; i < 3; ++i) s.push_back(make(1, {1}));
  for (int i = 0; i < 5; ++i) s.push_back(make(1, {2}));
  s.push_back(make(1, {std::nullopt}));
  s.push_back(make(1, {std::nullopt}));
  s.push_back(make(0, {1}));
  const TrialDataset d(Hierarchy({3}), std::move(s));
  const MultinomialFit f = fit_multinomial(d, 1, 1, {});
  CHECK(f.converged);
  CHECK(f.reference() == 2);
  const Eigen::VectorXd mu = predict_mu(f, d[0]);
  CHECK(mu[0] == doctest::Approx(0.2).epsilon(1e-8));
  CHECK(mu[1] == doctest::Approx(0.3).epsilon(1e-8));
  CHECK(mu[2] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK_THROWS_AS(predict_mu(f, Eigen::VectorXd::Ones(2)), Error);

  Eigen::VectorXd score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f.parameter_count()));
  for (const Subject& sub : d.subjects()) score += multinomial_score(f, d, sub);
  CHECK(score.lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("multinomial edge cases") {
  SUBCASE("a single observed cell predicts one") {
    std::vector<Subject> s{make(1, {1, 0}), make(1, {1, 0}), make(1, {1, std::nullopt}), make(0, {0, 1})};
    const TrialDataset d(Hierarchy({2, 2}), std::move(s));
    const MultinomialFit f = fit_multinomial(d, 1, 2, {});
    CHECK(f.parameter_count() == 0);
    const Eigen::VectorXd mu = predict_mu(f, d[0]);
    CHECK(mu.size() == 4);
    CHECK(mu[2] == 1.0);
    CHECK(mu.sum() == 1.0);
  }
  SUBCASE("no complete cases") {
    std::vector<Subject> s{make(1, {std::nullopt}), make(0, {0})};
    const TrialDataset d(Hierarchy({2}), std::move(s));
    try {
      fit_multinomial(d, 1, 1, {});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::no_complete_cases);
    }
  }
  SUBCASE("hand-set coefficients") {
    MultinomialFit f;
    f.cell_count = 3;
    f.modeled = {0, 1, 2};
    f.covariates = {};
    f.coefficients = Eigen::MatrixXd::Zero(1, 2);
    const Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
    const Eigen::VectorXd even = predict_mu(f, x);
    for (int c = 0; c < 3; ++c) CHECK(even[c] == doctest::Approx(1.0 / 3.0));
    f.coefficients(0, 0) = 20.0;
    CHECK(predict_mu(f, x)[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(predict_mu(f, x).sum() - 1.0) < 1e-10);
  }
}

TEST_CASE("multinomial fit on the two-covariate latent logistic model") {
  Rng rng(99);
  const TrialDataset full = gen_setting2(1000, rng);
  const int arm = 1;
  const MultinomialFit f = fit_multinomial(full, arm, 2, {0, 1});
  CHECK(f.converged);
  CHECK(full.arm_size(arm) > 450);

  Eigen::VectorXd score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f.parameter_count()));
  for (const Subject& s : full.subjects()) score += multinomial_score(f, full, s);
  CHECK(score.lpNorm<Eigen::Infinity>() < 1e-6);

  // Y1 = I(l1 + e > 0); Y2 = 0, 1, 2 by thresholds -1 and 1 on l2 + e.
  auto truth = [&](double x1, double x2) {
    const double l1 = 1.5 + x1 + 2.0 * x2 + arm * (0.6 + 0.2 * x1 + 0.25 * x2);
    const double l2 = 1.1 + 1.4 * x1 + x2 + arm * (0.4 + 0.5 * x1 + 0.75 * x2);
    const double p1 = oracle::expit(l1);
    const double top = oracle::expit(l2 - 1.0), above = oracle::expit(l2 + 1.0);
    const double y2[3] = {1.0 - above, above - top, top};
    std::vector<double> cells;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 3; ++b) cells.push_back((a ? p1 : 1.0 - p1) * y2[b]);
    return cells;
  };
  for (const auto& [x1, x2] : {std::pair{0.0, 0.0}, std::pair{1.0, 1.0}}) {
    Eigen::VectorXd x(3);
    x << 1.0, x1, x2;
    const Eigen::VectorXd mu = predict_mu(f, x);
    const std::vector<double> t = truth(x1, x2);
    for (int c = 0; c < 6; ++c) CHECK(std::abs(mu[c] - t[static_cast<std::size_t>(c)]) < 0.05);
  }
}

TEST_CASE("multinomial predictions are distributions (randomized)") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> z(0.0, 2.0);
  for (int rep = 0; rep < 200; ++rep) {
    const TrialDataset d = oracle::random_dataset(rng, 80, {2, 2}, 0.1, 1);
    const int arm = rep % 2;
    MultinomialFit f;
    try {
      f = fit_multinomial(d, arm, 2, {0});
    } catch (const Error&) {
      continue;  // sparse draws can fail to converge; the property concerns predictions
    }
    Eigen::VectorXd x(2);
    x << 1.0, z(rng);
    const Eigen::VectorXd mu = predict_mu(f, x);
    CHECK(std::abs(mu.sum() - 1.0) < 1e-10);
    CHECK(mu.minCoeff() >= 0.0);
    for (std::size_t c = 0; c < 4; ++c)
      if (f.parameter_block(c) < 0 && c != f.reference()) CHECK(mu[static_cast<Eigen::Index>(c)] == 0.0);
  }
}
