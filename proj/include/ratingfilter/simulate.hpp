// Synthetic hidden-factor paths, migration panels and event streams.
#pragma once

#include <cstdint>
#include <vector>

#include "ratingfilter/model.hpp"

namespace ratingfilter {

struct SimulationConfig {
  std::vector<std::int64_t> entities_per_rating;
  int steps = 0;          // discrete horizon (number of intervals)
  double horizon = 0.0;   // continuous horizon
  std::uint64_t seed = 0;
  Mode mode = Mode::Discrete;
  int step_length_days = 1;
};

// Piecewise-constant hidden path: states[i] holds on [times[i], times[i+1]).
// For discrete paths times[i] == i and there are steps + 1 entries.
struct HiddenPath {
  std::vector<double> times;
  std::vector<int> states;

  int state_at(double t) const;
};

void validate_config(const SimulationConfig& config, int p);

HiddenPath simulate_hidden_path(const HiddenFactorSpec& factor,
                                const SimulationConfig& config);

struct SimulatedPanel {
  MigrationPanel panel;
  HiddenPath path;
};

// Closed cohort: every exposed entity draws its next rating from the row of
// L for the hidden state at the start of the interval.
SimulatedPanel simulate_panel_discrete(const HiddenFactorSpec& factor,
                                       const MigrationLaw& law,
                                       const SimulationConfig& config);

struct SimulatedEvents {
  EventStream events;
  HiddenPath path;
};

// Exact competing-clock simulation of the conditionally Markov rating
// processes; clocks restart at every migration and every hidden jump.
SimulatedEvents simulate_events_continuous(const HiddenFactorSpec& factor,
                                           const MigrationLaw& law,
                                           const SimulationConfig& config);

// Aggregates a stream into a panel with the given step length (closed
// cohort only: resets are rejected).
MigrationPanel aggregate_events(const EventStream& events, double step_length,
                                int steps, int step_length_days);

}  // namespace ratingfilter
