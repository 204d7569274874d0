// Continuous-time filter driven by individual migration events.
//
// Between events the filtered law follows
//   dI^h = (k^T I)^h dt - I^h (lambda^h - sum_r lambda^r I^r) dt,
// where lambda^h = sum_{j != k} Y^j l^{h,jk} is the total migration intensity
// in hidden state h. At an event j -> k the law is reweighted by l^{h,jk}.
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ratingfilter/filter_discrete.hpp"
#include "ratingfilter/model.hpp"

namespace ratingfilter {

struct SpreadConfig {
  int subintervals_per_step = 0;
  std::uint64_t seed = 0;
};

// Places each step's off-diagonal jumps on distinct, uniformly chosen
// subinterval midpoints of that step. Time unit is days; step t covers
// [t * step_length_days, (t + 1) * step_length_days).
EventStream spread_jumps(const MigrationPanel& panel, const SpreadConfig& config);

// Largest per-step off-diagonal jump total.
std::int64_t max_step_jumps(const MigrationPanel& panel);

// Total migration intensity out of the current exposures, per hidden state.
Vector total_intensity(const MigrationLaw& law, const CountVector& exposures);

FilterState continuous_drift_step(const FilterState& state, double dt,
                                  const HiddenFactorSpec& factor, const MigrationLaw& law,
                                  const CountVector& exposures);

FilterState continuous_jump_update(const FilterState& state, std::pair<int, int> transition,
                                   const MigrationLaw& law);

struct ContinuousFilterOptions {
  double grid_dt = 1e-2;
  // Reporting interval; non-positive means grid_dt.
  double report_dt = 0.0;
  // Forecast step for the transition matrices; non-positive means report_dt.
  double forecast_horizon = 0.0;
  Conversion conversion = Conversion::Linear;
};

struct ContinuousTrajectory {
  // States sampled at report times 0, report_dt, 2 report_dt, ... <= horizon.
  // forecasts[n] is the probability forecast over the next forecast_horizon.
  FilterTrajectory trajectory;
  std::vector<double> report_times;
  // Per reporting interval: accumulated prior drift (k^T I dt) and the
  // remaining change (compensator drift, jump updates, renormalization).
  std::vector<Vector> prediction;
  std::vector<Vector> correction;
  // Log-likelihood of the event stream (density of event times and labels).
  double loglik = 0.0;
};

ContinuousTrajectory run_continuous_filter(const EventStream& events,
                                           const HiddenFactorSpec& factor,
                                           const MigrationLaw& law,
                                           const FilterState& init,
                                           const ContinuousFilterOptions& options);

}  // namespace ratingfilter
