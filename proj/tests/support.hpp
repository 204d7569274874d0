// Test-only oracles and instance generators.
//
// The oracles share no code with the library: they sum over every hidden
// path explicitly (small m, short panels) or evaluate a matrix exponential by
// its power series.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <vector>

#include "ratingfilter/model.hpp"
#include "ratingfilter/random.hpp"
#include "ratingfilter/simulate.hpp"

namespace rftest {

using namespace ratingfilter;

// Exhaustive Bayes over hidden paths theta_0..theta_T for a panel whose step
// t is driven by theta_t. Observation weight of a step under state h is
// prod_{jk} L^h_{jk}^{N_jk}; coefficients that do not depend on the model
// are dropped, as in the library.
struct Enumeration {
  double loglik = 0.0;
  // filtered[t](h) = P(theta_t = h | steps 0..t-1), t = 0..T.
  std::vector<Vector> filtered;
  // smoothed[t](h) = P(theta_t = h | all steps), t = 0..T-1.
  std::vector<Vector> smoothed;
  // pairs[t](k, h) = P(theta_t = k, theta_{t+1} = h | all steps), t = 0..T-2.
  std::vector<Matrix> pairs;
};

inline double step_weight(const CountMatrix& counts, const Matrix& law) {
  double w = 1.0;
  for (Eigen::Index j = 0; j < counts.rows(); ++j) {
    for (Eigen::Index k = 0; k < counts.cols(); ++k) {
      for (std::int64_t c = 0; c < counts(j, k); ++c) w *= law(j, k);
    }
  }
  return w;
}

// Enumerates paths with the given per-step weights w(t, h).
inline Enumeration enumerate_weights(const Matrix& w, const Vector& pi, const Matrix& trans) {
  const int m = static_cast<int>(pi.size());
  const int steps = static_cast<int>(w.rows());
  Enumeration out;
  out.filtered.assign(steps + 1, Vector::Zero(m));
  out.smoothed.assign(steps, Vector::Zero(m));
  out.pairs.assign(steps > 1 ? steps - 1 : 0, Matrix::Zero(m, m));
  // prefix[t](h): sum over paths of P(path) * prod_{s<t} weights, theta_t = h.
  std::vector<Vector> prefix(steps + 1, Vector::Zero(m));
  std::vector<int> path(steps + 1, 0);
  double total = 0.0;
  std::int64_t count = 1;
  for (int t = 0; t <= steps; ++t) count *= m;
  for (std::int64_t code = 0; code < count; ++code) {
    std::int64_t c = code;
    for (int t = 0; t <= steps; ++t) {
      path[t] = static_cast<int>(c % m);
      c /= m;
    }
    double prob = pi(path[0]);
    for (int t = 0; t < steps; ++t) prob *= trans(path[t], path[t + 1]);
    double like = prob;
    for (int t = 0; t <= steps; ++t) {
      prefix[t](path[t]) += like;
      if (t < steps) like *= w(t, path[t]);
    }
    total += like;
    for (int t = 0; t < steps; ++t) out.smoothed[t](path[t]) += like;
    for (int t = 0; t + 1 < steps; ++t) out.pairs[t](path[t], path[t + 1]) += like;
  }
  for (int t = 0; t <= steps; ++t) out.filtered[t] = prefix[t] / prefix[t].sum();
  for (auto& s : out.smoothed) s /= total;
  for (auto& v : out.pairs) v /= total;
  out.loglik = std::log(total);
  return out;
}

inline Enumeration enumerate_panel(const MigrationPanel& panel, const HiddenFactorSpec& factor,
                                   const MigrationLaw& law) {
  Matrix w(panel.steps(), factor.m);
  for (int t = 0; t < panel.steps(); ++t) {
    for (int h = 0; h < factor.m; ++h) w(t, h) = step_weight(panel.counts[t], law.per_state[h]);
  }
  return enumerate_weights(w, factor.pi, factor.trans);
}

// exp(A) by scaling and squaring of the Taylor series.
inline Matrix series_expm(const Matrix& a) {
  int squarings = 0;
  double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  while (norm > 0.25) {
    norm *= 0.5;
    ++squarings;
  }
  const Matrix scaled = a / std::pow(2.0, squarings);
  Matrix term = Matrix::Identity(a.rows(), a.cols());
  Matrix sum = term;
  for (int k = 1; k < 30; ++k) {
    term = term * scaled / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

inline Matrix random_stochastic(Rng& rng, int n) {
  Matrix out(n, n);
  for (int r = 0; r < n; ++r) out.row(r) = rng.simplex(n).transpose();
  return out;
}

inline HiddenFactorSpec random_factor(Rng& rng, int m) {
  return {m, rng.simplex(m), random_stochastic(rng, m), Mode::Discrete};
}

inline MigrationLaw random_law(Rng& rng, int m, int p) {
  MigrationLaw law{p, {}};
  for (int h = 0; h < m; ++h) law.per_state.push_back(random_stochastic(rng, p));
  return law;
}

// Closed-cohort panel with `entities` entities placed uniformly at random.
inline MigrationPanel random_panel(Rng& rng, const HiddenFactorSpec& factor,
                                   const MigrationLaw& law, int entities, int steps,
                                   std::uint64_t seed) {
  SimulationConfig cfg;
  cfg.entities_per_rating.assign(static_cast<std::size_t>(law.p), 0);
  for (int e = 0; e < entities; ++e) cfg.entities_per_rating[rng.below(law.p)] += 1;
  cfg.steps = steps;
  cfg.seed = seed;
  return simulate_panel_discrete(factor, law, cfg).panel;
}

// Random generator with off-diagonal rates uniform on [0, scale).
inline Matrix random_generator(Rng& rng, int n, double scale) {
  Matrix g = Matrix::Zero(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (r != c) g(r, c) = scale * rng.uniform();
    }
    g(r, r) = -g.row(r).sum();
  }
  return g;
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// Smallest sup-norm distance over relabelings of the hidden states.
inline double best_permutation_error(const HiddenFactorSpec& fit_factor,
                                     const MigrationLaw& fit_law,
                                     const HiddenFactorSpec& true_factor,
                                     const MigrationLaw& true_law) {
  std::vector<int> perm(static_cast<std::size_t>(fit_factor.m));
  for (int i = 0; i < fit_factor.m; ++i) perm[i] = i;
  double best = std::numeric_limits<double>::infinity();
  do {
    HiddenFactorSpec f = fit_factor;
    MigrationLaw l = fit_law;
    permute_states(f, l, perm);
    double err = max_abs_diff(f.trans, true_factor.trans);
    for (int h = 0; h < f.m; ++h) {
      err = std::max(err, max_abs_diff(l.per_state[h], true_law.per_state[h]));
    }
    best = std::min(best, err);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace rftest
