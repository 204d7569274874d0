#include "ratingfilter/simulate.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ratingfilter/random.hpp"

namespace ratingfilter {

namespace {

constexpr std::uint64_t kHiddenStream = 0;
constexpr std::uint64_t kRatingStream = 1;

}  // namespace

int HiddenPath::state_at(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return states.front();
  return states[static_cast<std::size_t>(it - times.begin()) - 1];
}

void validate_config(const SimulationConfig& config, int p) {
  if (static_cast<int>(config.entities_per_rating.size()) != p) {
    throw ModelError(fmt::format("entities_per_rating has {} entries, law has p = {}",
                                 config.entities_per_rating.size(), p));
  }
  bool positive = false;
  for (auto n : config.entities_per_rating) {
    if (n < 0) throw ModelError("entities_per_rating must be nonnegative");
    positive = positive || n > 0;
  }
  if (!positive) throw ModelError("at least one rating needs a positive population");
  if (config.mode == Mode::Discrete && config.steps <= 0) {
    throw ModelError("discrete horizon must be positive");
  }
  if (config.mode == Mode::Continuous && !(config.horizon > 0.0)) {
    throw ModelError("continuous horizon must be positive");
  }
}

HiddenPath simulate_hidden_path(const HiddenFactorSpec& factor,
                                const SimulationConfig& config) {
  if (factor.mode != config.mode) {
    throw ModelError("hidden factor mode does not match simulation mode");
  }
  auto violations = validate_factor(factor);
  if (!violations.empty()) {
    throw ModelError("invalid hidden factor: " + violations.front().message);
  }
  Rng rng(derive_seed(config.seed, kHiddenStream));
  HiddenPath path;
  int state = rng.categorical(factor.pi);
  if (config.mode == Mode::Discrete) {
    if (config.steps <= 0) throw ModelError("discrete horizon must be positive");
    path.times.reserve(config.steps + 1);
    path.states.reserve(config.steps + 1);
    path.times.push_back(0.0);
    path.states.push_back(state);
    for (int t = 1; t <= config.steps; ++t) {
      state = rng.categorical(factor.trans.row(state).transpose());
      path.times.push_back(static_cast<double>(t));
      path.states.push_back(state);
    }
    return path;
  }
  if (!(config.horizon > 0.0)) throw ModelError("continuous horizon must be positive");
  double now = 0.0;
  path.times.push_back(now);
  path.states.push_back(state);
  for (;;) {
    const double rate = -factor.trans(state, state);
    if (!(rate > 0.0)) break;
    now += rng.exponential(rate);
    if (now >= config.horizon) break;
    Vector targets = factor.trans.row(state).transpose();
    targets(state) = 0.0;
    state = rng.categorical(targets);
    path.times.push_back(now);
    path.states.push_back(state);
  }
  return path;
}

SimulatedPanel simulate_panel_discrete(const HiddenFactorSpec& factor,
                                       const MigrationLaw& law,
                                       const SimulationConfig& config) {
  if (config.mode != Mode::Discrete || factor.mode != Mode::Discrete) {
    throw ModelError("simulate_panel_discrete requires discrete mode");
  }
  require_valid(factor, law);
  validate_config(config, law.p);
  SimulatedPanel out;
  out.path = simulate_hidden_path(factor, config);
  Rng rng(derive_seed(config.seed, kRatingStream));

  const int p = law.p;
  MigrationPanel& panel = out.panel;
  panel.p = p;
  panel.step_length_days = config.step_length_days;
  CountVector y(p);
  for (int j = 0; j < p; ++j) y(j) = config.entities_per_rating[j];
  for (int t = 0; t < config.steps; ++t) {
    const Matrix& l = law.per_state[out.path.states[t]];
    CountMatrix n = CountMatrix::Zero(p, p);
    for (int j = 0; j < p; ++j) {
      const Vector row = l.row(j).transpose();
      for (std::int64_t e = 0; e < y(j); ++e) n(j, rng.categorical(row)) += 1;
    }
    panel.exposures.push_back(y);
    panel.counts.push_back(n);
    y = n.colwise().sum().transpose();
  }
  return out;
}

SimulatedEvents simulate_events_continuous(const HiddenFactorSpec& factor,
                                           const MigrationLaw& law,
                                           const SimulationConfig& config) {
  if (config.mode != Mode::Continuous || factor.mode != Mode::Continuous) {
    throw ModelError("simulate_events_continuous requires continuous mode");
  }
  require_valid(factor, law);
  validate_config(config, law.p);
  SimulatedEvents out;
  out.path = simulate_hidden_path(factor, config);
  Rng rng(derive_seed(config.seed, kRatingStream));

  const int p = law.p;
  EventStream& stream = out.events;
  stream.horizon = config.horizon;
  stream.initial_exposures.resize(p);
  for (int j = 0; j < p; ++j) stream.initial_exposures(j) = config.entities_per_rating[j];
  CountVector y = stream.initial_exposures;

  const auto& times = out.path.times;
  for (std::size_t seg = 0; seg < times.size(); ++seg) {
    const double seg_end = seg + 1 < times.size() ? times[seg + 1] : config.horizon;
    const Matrix& g = law.per_state[out.path.states[seg]];
    Vector exit_rate(p);
    for (int j = 0; j < p; ++j) exit_rate(j) = -g(j, j);
    double now = times[seg];
    for (;;) {
      Vector by_rating(p);
      for (int j = 0; j < p; ++j) by_rating(j) = static_cast<double>(y(j)) * exit_rate(j);
      const double total = by_rating.sum();
      if (!(total > 0.0)) break;
      now += rng.exponential(total);
      if (now >= seg_end) break;
      const int from = rng.categorical(by_rating);
      Vector targets = g.row(from).transpose();
      targets(from) = 0.0;
      const int to = rng.categorical(targets);
      stream.events.push_back({now, from, to, y});
      y(from) -= 1;
      y(to) += 1;
    }
  }
  return out;
}

MigrationPanel aggregate_events(const EventStream& events, double step_length, int steps,
                                int step_length_days) {
  if (!events.resets.empty()) {
    throw DataError("aggregate_events: streams with exposure resets are not supported");
  }
  if (!(step_length > 0.0) || steps < 0) throw DataError("invalid aggregation grid");
  const int p = events.p();
  MigrationPanel panel;
  panel.p = p;
  panel.step_length_days = step_length_days;
  CountVector y = events.initial_exposures;
  std::size_t e = 0;
  for (int t = 0; t < steps; ++t) {
    const double end = (t + 1) * step_length;
    CountMatrix n = CountMatrix::Zero(p, p);
    CountVector start = y;
    // Counts jumps rather than endpoint moves: an entity that moves twice in
    // one step contributes two off-diagonal counts.
    while (e < events.events.size() && events.events[e].time < end) {
      const auto& ev = events.events[e++];
      n(ev.from, ev.to) += 1;
      y(ev.from) -= 1;
      y(ev.to) += 1;
    }
    for (int j = 0; j < p; ++j) {
      n(j, j) = start(j) - (n.row(j).sum() - n(j, j));
      if (n(j, j) < 0) {
        throw DataError(fmt::format("step {}: more jumps out of rating {} than its exposure",
                                    t + 1, j + 1));
      }
    }
    panel.exposures.push_back(start);
    panel.counts.push_back(n);
  }
  return panel;
}

}  // namespace ratingfilter
