// Discrete-time filtering of the hidden factor from aggregated migration
// counts, with one-step-ahead transition forecasts.
//
// Timing: the counts of step t (1-based) are driven by the hidden state at
// t - 1, so the filtered law at t - 1 reweighted by the step-t likelihood is
// propagated through K to give the law at t.
#pragma once

#include <optional>
#include <vector>

#include "ratingfilter/model.hpp"

namespace ratingfilter {

struct FilterTrajectory {
  // states[t] is the filtered law after assimilating t panel steps; there are
  // steps + 1 entries (the initial law first).
  std::vector<FilterState> states;
  // forecasts[t] is the transition matrix forecast for step t + 1, issued
  // from states[t] before that step is observed.
  std::vector<Matrix> forecasts;
  // Sum of log predictive probabilities of the observed counts, without
  // multinomial coefficients (they do not depend on the model).
  double loglik = 0.0;
};

struct FilterUpdate {
  FilterState state;
  // log sum_i I_i w_i: the predictive log-probability of the observation.
  double log_evidence = 0.0;
};

// Per-state log-likelihood of one step: sum_{j,k} dN^{jk} log L^{i,jk}, with
// zero counts skipped. -inf marks a state that cannot produce the counts.
Vector step_log_weights(const CountMatrix& counts, const MigrationLaw& law);

// Reweights by exp(log_weights), then evolves through the hidden chain.
FilterUpdate bayes_then_evolve(const FilterState& state, const Vector& log_weights,
                               const HiddenFactorSpec& factor);

// Single transition type: dn of y exposed entities jumped, with per-state
// jump probability jump_probs(i).
FilterState filter_step_univariate(const FilterState& state, std::int64_t dn,
                                   std::int64_t y, const HiddenFactorSpec& factor,
                                   const Vector& jump_probs);

FilterUpdate filter_update_univariate(const FilterState& state, std::int64_t dn,
                                      std::int64_t y, const HiddenFactorSpec& factor,
                                      const Vector& jump_probs);

FilterState filter_step_multivariate(const FilterState& state, const CountMatrix& counts,
                                     const CountVector& exposures,
                                     const HiddenFactorSpec& factor,
                                     const MigrationLaw& law);

FilterUpdate filter_update_multivariate(const FilterState& state,
                                        const CountMatrix& counts,
                                        const CountVector& exposures,
                                        const HiddenFactorSpec& factor,
                                        const MigrationLaw& law);

FilterTrajectory run_filter(const MigrationPanel& panel, const HiddenFactorSpec& factor,
                            const MigrationLaw& law,
                            const std::optional<FilterState>& init = std::nullopt);

struct UnivariateTrajectory {
  std::vector<FilterState> states;
  // forecasts(t): predicted jump probability for step t + 1.
  Vector forecasts;
  double loglik = 0.0;
};

// Univariate filter over one transition series. jumps[t] of exposures[t].
UnivariateTrajectory run_univariate_filter(const std::vector<std::int64_t>& jumps,
                                           const std::vector<std::int64_t>& exposures,
                                           const HiddenFactorSpec& factor,
                                           const Vector& jump_probs);

}  // namespace ratingfilter
