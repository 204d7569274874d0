#include "ratingfilter/filter_continuous.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "ratingfilter/random.hpp"

namespace ratingfilter {

namespace {

constexpr std::uint64_t kSpreadStream = 2;
// Euler substeps are sized so dt * (rate bound) stays below this.
constexpr double kStability = 0.5;

void require_continuous(const HiddenFactorSpec& factor, const MigrationLaw& law) {
  if (factor.mode != Mode::Continuous) {
    throw ModelError("continuous filter requires a generator for the hidden factor");
  }
  if (law.states() != factor.m) throw ModelError("law / hidden factor state count mismatch");
}

// Advances the drift ODE by dt. Adds the prior-drift contribution to
// `prediction` and the integral of the mean intensity to `mean_intensity`.
void drift(Vector& probs, double dt, const Matrix& generator, const Vector& lambda,
           Vector* prediction, double* mean_intensity) {
  const double spread = lambda.size() > 0 ? lambda.maxCoeff() - lambda.minCoeff() : 0.0;
  const double rate = (-generator.diagonal().array()).maxCoeff() + spread;
  const int substeps = std::max(1, static_cast<int>(std::ceil(dt * rate / kStability)));
  const double h = dt / substeps;
  for (int s = 0; s < substeps; ++s) {
    const Vector prior = generator.transpose() * probs;
    const double mean = lambda.dot(probs);
    if (prediction) *prediction += h * prior;
    if (mean_intensity) *mean_intensity += h * mean;
    probs += h * (prior - probs.cwiseProduct(lambda - Vector::Constant(lambda.size(), mean)));
    renormalize(probs);
  }
}

}  // namespace

std::int64_t max_step_jumps(const MigrationPanel& panel) {
  std::int64_t best = 0;
  for (const CountMatrix& n : panel.counts) {
    best = std::max(best, n.sum() - n.diagonal().sum());
  }
  return best;
}

EventStream spread_jumps(const MigrationPanel& panel, const SpreadConfig& config) {
  require_valid(panel);
  const int slots = config.subintervals_per_step;
  const std::int64_t busiest = max_step_jumps(panel);
  if (slots <= busiest) {
    throw DataError(fmt::format("{} subintervals cannot hold {} jumps of one step",
                                slots, busiest));
  }
  Rng rng(derive_seed(config.seed, kSpreadStream));
  const int p = panel.p;
  const double step = panel.step_length_days;
  EventStream out;
  out.horizon = step * panel.steps();
  out.initial_exposures = panel.steps() > 0 ? panel.exposures[0] : CountVector::Zero(p);
  CountVector y = out.initial_exposures;
  std::vector<int> slot_ids(static_cast<std::size_t>(slots));
  std::vector<std::pair<int, int>> labels;
  for (int t = 0; t < panel.steps(); ++t) {
    const double start = t * step;
    if (y != panel.exposures[t]) {
      out.resets.push_back({start, panel.exposures[t]});
      y = panel.exposures[t];
    }
    labels.clear();
    const CountMatrix& n = panel.counts[t];
    for (int j = 0; j < p; ++j) {
      for (int k = 0; k < p; ++k) {
        if (j == k) continue;
        for (std::int64_t c = 0; c < n(j, k); ++c) labels.emplace_back(j, k);
      }
    }
    if (labels.empty()) continue;
    const std::size_t count = labels.size();
    for (std::size_t i = count - 1; i > 0; --i) {
      std::swap(labels[i], labels[rng.below(i + 1)]);
    }
    std::iota(slot_ids.begin(), slot_ids.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t pick = i + rng.below(slot_ids.size() - i);
      std::swap(slot_ids[i], slot_ids[pick]);
    }
    std::sort(slot_ids.begin(), slot_ids.begin() + static_cast<std::ptrdiff_t>(count));
    for (std::size_t i = 0; i < count; ++i) {
      const double when = start + (slot_ids[i] + 0.5) * step / slots;
      const auto [from, to] = labels[i];
      out.events.push_back({when, from, to, y});
      y(from) -= 1;
      y(to) += 1;
    }
  }
  return out;
}

Vector total_intensity(const MigrationLaw& law, const CountVector& exposures) {
  Vector lambda = Vector::Zero(law.states());
  for (int h = 0; h < law.states(); ++h) {
    const Matrix& g = law.per_state[h];
    for (int j = 0; j < law.p; ++j) {
      if (exposures(j) == 0) continue;
      const double out_rate = g.row(j).sum() - g(j, j);
      lambda(h) += static_cast<double>(exposures(j)) * out_rate;
    }
  }
  return lambda;
}

FilterState continuous_drift_step(const FilterState& state, double dt,
                                  const HiddenFactorSpec& factor, const MigrationLaw& law,
                                  const CountVector& exposures) {
  require_continuous(factor, law);
  if (!(dt > 0.0)) throw ModelError("continuous_drift_step: dt must be positive");
  if (exposures.size() != law.p) throw ModelError("exposure vector size != p");
  FilterState out{state.probs, state.time + dt};
  drift(out.probs, dt, factor.trans, total_intensity(law, exposures), nullptr, nullptr);
  return out;
}

FilterState continuous_jump_update(const FilterState& state, std::pair<int, int> transition,
                                   const MigrationLaw& law) {
  const auto [j, k] = transition;
  if (j < 0 || k < 0 || j >= law.p || k >= law.p || j == k) {
    throw DataError(fmt::format("invalid transition {}->{}", j + 1, k + 1));
  }
  if (state.probs.size() != law.states()) throw ModelError("filter state size != m");
  Vector weighted(law.states());
  for (int h = 0; h < law.states(); ++h) weighted(h) = state.probs(h) * law.per_state[h](j, k);
  const double mass = weighted.sum();
  if (!(mass > 0.0)) {
    throw ImpossibleObservation(
        fmt::format("transition {}->{} has zero intensity under every hidden state", j + 1,
                    k + 1));
  }
  FilterState out{weighted / mass, state.time};
  renormalize(out.probs);
  return out;
}

ContinuousTrajectory run_continuous_filter(const EventStream& events,
                                           const HiddenFactorSpec& factor,
                                           const MigrationLaw& law, const FilterState& init,
                                           const ContinuousFilterOptions& options) {
  require_continuous(factor, law);
  require_valid(factor, law);
  if (events.p() != law.p) throw ModelError("event stream / law rating count mismatch");
  if (!(options.grid_dt > 0.0)) throw ModelError("grid_dt must be positive");
  if (init.probs.size() != factor.m) throw ModelError("initial state size != m");
  const double report_dt = options.report_dt > 0.0 ? options.report_dt : options.grid_dt;
  const double horizon_step =
      options.forecast_horizon > 0.0 ? options.forecast_horizon : report_dt;

  std::vector<Matrix> step_probs;
  for (const Matrix& g : law.per_state) {
    step_probs.push_back(generator_to_probabilities(g, horizon_step, options.conversion));
  }
  auto forecast = [&](const Vector& probs) {
    Matrix nu = Matrix::Zero(law.p, law.p);
    for (int h = 0; h < law.states(); ++h) nu += probs(h) * step_probs[h];
    return nu;
  };

  ContinuousTrajectory out;
  const int reports =
      static_cast<int>(std::floor(events.horizon / report_dt * (1.0 + 1e-12)));
  Vector probs = init.probs;
  renormalize(probs);
  CountVector y = events.initial_exposures;
  Vector lambda = total_intensity(law, y);
  double now = init.time;
  std::size_t next_event = 0;
  std::size_t next_reset = 0;
  const double inf = std::numeric_limits<double>::infinity();

  auto apply_due = [&](double until) {
    bool changed = false;
    for (;;) {
      const double t_reset =
          next_reset < events.resets.size() ? events.resets[next_reset].time : inf;
      const double t_event =
          next_event < events.events.size() ? events.events[next_event].time : inf;
      if (t_reset <= until && t_reset <= t_event) {
        y = events.resets[next_reset++].exposures;
        changed = true;
      } else if (t_event <= until) {
        const MigrationEvent& ev = events.events[next_event++];
        const double exposure = static_cast<double>(y(ev.from));
        double rate = 0.0;
        for (int h = 0; h < law.states(); ++h) rate += probs(h) * law.per_state[h](ev.from, ev.to);
        out.loglik += std::log(exposure * rate);
        probs = continuous_jump_update(FilterState{probs, now}, {ev.from, ev.to}, law).probs;
        y(ev.from) -= 1;
        y(ev.to) += 1;
        changed = true;
      } else {
        break;
      }
    }
    if (changed) lambda = total_intensity(law, y);
  };

  apply_due(now);
  out.report_times.push_back(now);
  out.trajectory.states.push_back({probs, now});
  out.trajectory.forecasts.push_back(forecast(probs));
  for (int n = 1; n <= reports; ++n) {
    const double report_at = n * report_dt;
    const Vector start = probs;
    Vector prediction = Vector::Zero(factor.m);
    double compensator = 0.0;
    while (now < report_at) {
      double target = std::min(now + options.grid_dt, report_at);
      if (next_event < events.events.size()) {
        target = std::min(target, events.events[next_event].time);
      }
      if (next_reset < events.resets.size()) {
        target = std::min(target, events.resets[next_reset].time);
      }
      if (target > now) drift(probs, target - now, factor.trans, lambda, &prediction, &compensator);
      now = target;
      apply_due(now);
    }
    out.loglik -= compensator;
    out.report_times.push_back(report_at);
    out.trajectory.states.push_back({probs, report_at});
    out.trajectory.forecasts.push_back(forecast(probs));
    out.prediction.push_back(prediction);
    out.correction.push_back(probs - start - prediction);
  }
  out.trajectory.loglik = out.loglik;
  return out;
}

}  // namespace ratingfilter
