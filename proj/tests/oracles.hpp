// Independent reference implementations and random fixtures shared by tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "winstat/data.hpp"

namespace oracle {

using winstat::Subject;
using winstat::TrialDataset;

struct PairCounts {
  std::uint64_t wins = 0;
  std::uint64_t losses = 0;
  std::uint64_t pairs = 0;

  double p_win() const { return static_cast<double>(wins) / static_cast<double>(pairs); }
  double p_loss() const { return static_cast<double>(losses) / static_cast<double>(pairs); }
};

/// Every treated-control pair, walking the endpoints in priority order. A level
/// where either value is missing is skipped as a tie.
inline PairCounts pair_enumeration(const TrialDataset& data) {
  PairCounts c;
  const int K = data.hierarchy().endpoints();
  for (const Subject& t : data.subjects()) {
    if (t.arm != 1) continue;
    for (const Subject& u : data.subjects()) {
      if (u.arm != 0) continue;
      ++c.pairs;
      for (int k = 0; k < K; ++k) {
        const auto& a = t.outcomes[static_cast<std::size_t>(k)];
        const auto& b = u.outcomes[static_cast<std::size_t>(k)];
        if (!a || !b || *a == *b) continue;
        if (*a > *b) ++c.wins;
        else ++c.losses;
        break;
      }
    }
  }
  return c;
}

/// Random dataset with both arms populated. Each outcome is missing with
/// probability `missing`; covariates are standard normal.
inline TrialDataset random_dataset(std::mt19937_64& rng, std::size_t n, std::vector<int> supports,
                                   double missing = 0.0, std::size_t covariates = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Subject> subjects(n);
  for (std::size_t i = 0; i < n; ++i) {
    Subject& s = subjects[i];
    s.arm = i < 2 ? static_cast<int>(i) : (u(rng) < 0.5 ? 1 : 0);
    for (int l : supports) {
      const int v = std::min(l - 1, static_cast<int>(u(rng) * l));
      s.outcomes.emplace_back(v);
      if (u(rng) < missing) s.outcomes.back().reset();
    }
    for (std::size_t j = 0; j < covariates; ++j) s.covariates.push_back(z(rng));
  }
  return TrialDataset(winstat::Hierarchy(std::move(supports)), std::move(subjects));
}

inline TrialDataset swap_arms(const TrialDataset& data) {
  std::vector<Subject> subjects(data.subjects().begin(), data.subjects().end());
  for (Subject& s : subjects) s.arm = 1 - s.arm;
  return TrialDataset(data.hierarchy(), std::move(subjects), data.covariate_names());
}

/// Maps every category through a strictly increasing map into a wider support.
inline TrialDataset relabel(const TrialDataset& d, std::mt19937_64& rng) {
  std::vector<int> wide;
  std::vector<std::vector<int>> maps;
  for (int l : d.hierarchy().supports()) {
    std::vector<int> m(static_cast<std::size_t>(l));
    int next = 0;
    for (int& v : m) {
      next += 1 + static_cast<int>(rng() % 3);
      v = next;
    }
    maps.push_back(m);
    wide.push_back(next + 1 + static_cast<int>(rng() % 2));
  }
  std::vector<Subject> s(d.subjects().begin(), d.subjects().end());
  for (Subject& sub : s)
    for (std::size_t k = 0; k < sub.outcomes.size(); ++k)
      if (sub.outcomes[k]) sub.outcomes[k] = maps[k][static_cast<std::size_t>(*sub.outcomes[k])];
  return TrialDataset(winstat::Hierarchy(wide), std::move(s), d.covariate_names());
}

// --- logistic regression by damped Newton with a backtracking line search -------

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> solve(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    std::swap(A[c], A[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k < n; ++k) A[r][k] -= f * A[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[i][k] * x[k];
    x[i] = s / A[i][i];
  }
  return x;
}

/// Maximum likelihood fit of R ~ expit(x'b) for rows x (with intercept).
inline std::vector<double> newton_logistic(const std::vector<std::vector<double>>& X,
                                           const std::vector<int>& R) {
  const std::size_t p = X.front().size();
  std::vector<double> beta(p, 0.0);
  auto loglik = [&](const std::vector<double>& b) {
    double ll = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
      double eta = 0.0;
      for (std::size_t j = 0; j < p; ++j) eta += X[i][j] * b[j];
      ll += R[i] ? -std::log1p(std::exp(-eta)) : -std::log1p(std::exp(eta));
    }
    return ll;
  };
  for (int it = 0; it < 200; ++it) {
    std::vector<double> g(p, 0.0);
    std::vector<std::vector<double>> H(p, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < X.size(); ++i) {
      double eta = 0.0;
      for (std::size_t j = 0; j < p; ++j) eta += X[i][j] * beta[j];
      const double pi = expit(eta);
      for (std::size_t j = 0; j < p; ++j) {
        g[j] += X[i][j] * (R[i] - pi);
        for (std::size_t k = 0; k < p; ++k) H[j][k] += X[i][j] * X[i][k] * pi * (1 - pi);
      }
    }
    const std::vector<double> step = solve(H, g);
    double t = 1.0;
    const double base = loglik(beta);
    std::vector<double> next(p);
    for (;;) {
      for (std::size_t j = 0; j < p; ++j) next[j] = beta[j] + t * step[j];
      if (loglik(next) >= base || t < 1e-8) break;
      t *= 0.5;
    }
    double change = 0.0;
    for (std::size_t j = 0; j < p; ++j) change = std::max(change, std::abs(next[j] - beta[j]));
    beta = next;
    if (change < 1e-12) break;
  }
  return beta;
}

// --- numerical helpers -------------------------------------------------------------

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Standard deviation of a statistic over nonparametric bootstrap resamples.
inline double bootstrap_sd(const TrialDataset& data, const std::function<double(const TrialDataset&)>& stat,
                           int resamples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<double> values;
  for (int b = 0; b < resamples; ++b) {
    std::vector<Subject> s;
    s.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) s.push_back(data[pick(rng)]);
    values.push_back(stat(TrialDataset(data.hierarchy(), std::move(s), data.covariate_names())));
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

}  // namespace oracle
