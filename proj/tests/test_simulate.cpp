#include <gtest/gtest.h>

#include <sstream>

#include "ratingfilter/io.hpp"
#include "ratingfilter/simulate.hpp"
#include "support.hpp"

using namespace ratingfilter;

namespace {

SimulationConfig discrete_config(std::vector<std::int64_t> entities, int steps,
                                 std::uint64_t seed) {
  SimulationConfig c;
  c.entities_per_rating = std::move(entities);
  c.steps = steps;
  c.seed = seed;
  return c;
}

SimulationConfig continuous_config(std::vector<std::int64_t> entities, double horizon,
                                   std::uint64_t seed) {
  SimulationConfig c;
  c.entities_per_rating = std::move(entities);
  c.horizon = horizon;
  c.seed = seed;
  c.mode = Mode::Continuous;
  return c;
}

HiddenFactorSpec single_state(Mode mode) {
  return {1, Vector::Ones(1), mode == Mode::Discrete ? Matrix::Ones(1, 1) : Matrix::Zero(1, 1),
          mode};
}

}  // namespace

TEST(HiddenPath, SingleStateIsConstant) {
  const HiddenPath path = simulate_hidden_path(single_state(Mode::Discrete),
                                               discrete_config({1}, 50, 1));
  ASSERT_EQ(path.states.size(), 51u);
  for (int s : path.states) EXPECT_EQ(s, 0);
}

TEST(HiddenPath, IdentityKernelKeepsInitialDraw) {
  Rng rng(2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    HiddenFactorSpec f{3, rng.simplex(3), Matrix::Identity(3, 3), Mode::Discrete};
    const HiddenPath path = simulate_hidden_path(f, discrete_config({1}, 30, seed));
    for (int s : path.states) EXPECT_EQ(s, path.states.front());
  }
}

TEST(HiddenPath, StationaryOccupation) {
  HiddenFactorSpec f{2, Vector::Constant(2, 0.5), Matrix(2, 2), Mode::Discrete};
  f.trans << 0.9, 0.1, 0.2, 0.8;
  const HiddenPath path = simulate_hidden_path(f, discrete_config({1}, 100000, 9));
  double in_first = 0.0;
  for (int s : path.states) in_first += s == 0;
  EXPECT_NEAR(in_first / static_cast<double>(path.states.size()), 2.0 / 3.0, 0.01);
}

TEST(HiddenPath, ModeMismatchRejected) {
  EXPECT_THROW(simulate_hidden_path(single_state(Mode::Discrete), continuous_config({1}, 1.0, 1)),
               ModelError);
}

TEST(HiddenPath, ContinuousHoldingTimes) {
  HiddenFactorSpec f{2, Vector::Constant(2, 0.5), Matrix(2, 2), Mode::Continuous};
  f.trans << -2.0, 2.0, 0.5, -0.5;
  const HiddenPath path = simulate_hidden_path(f, continuous_config({1}, 20000.0, 4));
  double time_in[2] = {0, 0};
  int visits[2] = {0, 0};
  for (std::size_t i = 0; i + 1 < path.times.size(); ++i) {
    time_in[path.states[i]] += path.times[i + 1] - path.times[i];
    visits[path.states[i]] += 1;
    EXPECT_NE(path.states[i], path.states[i + 1]);
  }
  // Mean holding time 1 / rate within 5%.
  EXPECT_NEAR(time_in[0] / visits[0], 0.5, 0.025);
  EXPECT_NEAR(time_in[1] / visits[1], 2.0, 0.1);
}

TEST(SimulatePanel, IdentityLawKeepsEveryoneInPlace) {
  Rng rng(1);
  HiddenFactorSpec f = rftest::random_factor(rng, 2);
  MigrationLaw law{3, {Matrix::Identity(3, 3), Matrix::Identity(3, 3)}};
  const auto sim = simulate_panel_discrete(f, law, discrete_config({5, 0, 7}, 20, 3));
  for (int t = 0; t < sim.panel.steps(); ++t) {
    EXPECT_EQ(sim.panel.exposures[t], sim.panel.exposures[0]);
    CountMatrix diag = CountMatrix::Zero(3, 3);
    diag.diagonal() = sim.panel.exposures[0];
    EXPECT_EQ(sim.panel.counts[t], diag);
  }
}

TEST(SimulatePanel, SingleEntityAlternates) {
  MigrationLaw law{2, {Matrix(2, 2)}};
  law.per_state[0] << 0.0, 1.0, 1.0, 0.0;
  const auto sim = simulate_panel_discrete(single_state(Mode::Discrete), law,
                                           discrete_config({1, 0}, 6, 5));
  for (int t = 0; t < 6; ++t) {
    EXPECT_EQ(sim.panel.exposures[t](0), t % 2 == 0 ? 1 : 0);
    EXPECT_EQ(sim.panel.exposures[t](1), t % 2 == 0 ? 0 : 1);
  }
}

TEST(SimulatePanel, BinomialMeanBand) {
  MigrationLaw law{2, {Matrix(2, 2)}};
  law.per_state[0] << 0.9, 0.1, 0.0, 1.0;
  // Keep Y^1 at 1000 every step: refill by using a fresh single-step panel.
  double ratio_sum = 0.0;
  const int steps = 500;
  for (int t = 0; t < steps; ++t) {
    const auto sim = simulate_panel_discrete(single_state(Mode::Discrete), law,
                                             discrete_config({1000, 0}, 1, 1000 + t));
    ratio_sum += static_cast<double>(sim.panel.counts[0](0, 1)) / 1000.0;
  }
  // Mean of 500 binomial(1000, 0.1) ratios: sd = sqrt(0.09 / 5e5) ~ 4.2e-4.
  EXPECT_GE(ratio_sum / steps, 0.095);
  EXPECT_LE(ratio_sum / steps, 0.105);
}

TEST(SimulatePanel, ConservationClosedCohortAndLag) {
  Rng rng(8);
  const HiddenFactorSpec f = rftest::random_factor(rng, 3);
  const MigrationLaw law = rftest::random_law(rng, 3, 4);
  const auto sim = simulate_panel_discrete(f, law, discrete_config({10, 20, 30, 40}, 40, 12));
  EXPECT_TRUE(validate_panel(sim.panel).empty());
  EXPECT_EQ(sim.path.states.size(), 41u);
  for (int t = 0; t + 1 < sim.panel.steps(); ++t) {
    EXPECT_EQ(sim.panel.exposures[t + 1],
              CountVector(sim.panel.counts[t].colwise().sum().transpose()));
  }
}

TEST(SimulatePanel, OneStateFrequenciesMatchLaw) {
  MigrationLaw law{3, {Matrix(3, 3)}};
  law.per_state[0] << 0.8, 0.15, 0.05, 0.1, 0.7, 0.2, 0.05, 0.15, 0.8;
  const auto sim = simulate_panel_discrete(single_state(Mode::Discrete), law,
                                           discrete_config({2000, 2000, 2000}, 50, 21));
  Matrix counts = Matrix::Zero(3, 3);
  for (const auto& n : sim.panel.counts) counts += n.cast<double>();
  for (int j = 0; j < 3; ++j) {
    const double total = counts.row(j).sum();
    for (int k = 0; k < 3; ++k) {
      const double p = law.per_state[0](j, k);
      EXPECT_NEAR(counts(j, k) / total, p, 3.0 * std::sqrt(p * (1 - p) / total));
    }
  }
}

TEST(SimulatePanel, SeedDeterminism) {
  Rng rng(4);
  const HiddenFactorSpec f = rftest::random_factor(rng, 2);
  const MigrationLaw law = rftest::random_law(rng, 2, 3);
  auto render = [&](std::uint64_t seed) {
    std::ostringstream out;
    write_panel_csv(out, simulate_panel_discrete(f, law, discrete_config({50, 50, 50}, 30, seed)).panel);
    return out.str();
  };
  EXPECT_EQ(render(77), render(77));
  EXPECT_NE(render(77), render(78));
}

TEST(SimulatePanel, ConfigValidation) {
  Rng rng(4);
  const HiddenFactorSpec f = rftest::random_factor(rng, 2);
  const MigrationLaw law = rftest::random_law(rng, 2, 3);
  EXPECT_THROW(simulate_panel_discrete(f, law, discrete_config({1, 1}, 5, 1)), ModelError);
  EXPECT_THROW(simulate_panel_discrete(f, law, discrete_config({0, 0, 0}, 5, 1)), ModelError);
  EXPECT_THROW(simulate_panel_discrete(f, law, discrete_config({1, -1, 1}, 5, 1)), ModelError);
  EXPECT_THROW(simulate_panel_discrete(f, law, discrete_config({1, 1, 1}, 0, 1)), ModelError);
}

TEST(SimulateEvents, ZeroIntensityGivesEmptyStream) {
  MigrationLaw law{3, {Matrix::Zero(3, 3)}};
  const auto sim = simulate_events_continuous(single_state(Mode::Continuous), law,
                                              continuous_config({5, 5, 5}, 100.0, 1));
  EXPECT_TRUE(sim.events.events.empty());
}

TEST(SimulateEvents, SingleEntityExponentialGaps) {
  const double lambda = 2.0;
  MigrationLaw law{2, {Matrix(2, 2)}};
  law.per_state[0] << -lambda, lambda, 1.0, -1.0;
  const auto sim = simulate_events_continuous(single_state(Mode::Continuous), law,
                                              continuous_config({1, 0}, 14000.0, 6));
  // 1 -> 2 gaps: time spent in rating 1 before each upward jump.
  double entered = 0.0, total = 0.0;
  int count = 0;
  for (const auto& ev : sim.events.events) {
    if (ev.from == 0) {
      total += ev.time - entered;
      ++count;
    } else {
      entered = ev.time;
    }
  }
  ASSERT_GE(count, 9000);
  EXPECT_NEAR(total / count, 1.0 / lambda, 0.05 / lambda);
}

TEST(SimulateEvents, FirstEventTimeSuperposition) {
  // First event ~ Exp(1000 * 0.003); compare sample mean and P(T > t) to the
  // closed form over many seeds.
  MigrationLaw law{3, {Matrix(3, 3)}};
  law.per_state[0] << -0.003, 0.002, 0.001, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0;
  const double rate = 1000 * 0.003;
  const int runs = 4000;
  double sum = 0.0;
  int beyond = 0;
  for (int r = 0; r < runs; ++r) {
    const auto sim = simulate_events_continuous(single_state(Mode::Continuous), law,
                                                continuous_config({1000, 0, 0}, 10.0, 500 + r));
    ASSERT_FALSE(sim.events.events.empty());
    const double t = sim.events.events.front().time;
    sum += t;
    beyond += t > 0.5;
  }
  const double mean = 1.0 / rate;
  EXPECT_NEAR(sum / runs, mean, 4.0 * mean / std::sqrt(runs));
  const double p = std::exp(-rate * 0.5);
  EXPECT_NEAR(static_cast<double>(beyond) / runs, p, 4.0 * std::sqrt(p * (1 - p) / runs));
}

TEST(SimulateEvents, StrictlyIncreasingConsistentSnapshots) {
  Rng rng(10);
  HiddenFactorSpec f{3, rng.simplex(3), rftest::random_generator(rng, 3, 0.5), Mode::Continuous};
  MigrationLaw law{3, {}};
  for (int h = 0; h < 3; ++h) law.per_state.push_back(rftest::random_generator(rng, 3, 0.02));
  const auto sim = simulate_events_continuous(f, law, continuous_config({30, 30, 30}, 200.0, 2));
  EXPECT_TRUE(validate_events(sim.events).empty());
  for (std::size_t i = 1; i < sim.events.events.size(); ++i) {
    EXPECT_LT(sim.events.events[i - 1].time, sim.events.events[i].time);
  }
}

TEST(AggregateEvents, ConservationAndTotals) {
  Rng rng(12);
  HiddenFactorSpec f{2, rng.simplex(2), rftest::random_generator(rng, 2, 0.1), Mode::Continuous};
  MigrationLaw law{3, {}};
  for (int h = 0; h < 2; ++h) law.per_state.push_back(rftest::random_generator(rng, 3, 0.01));
  const auto sim = simulate_events_continuous(f, law, continuous_config({100, 100, 100}, 300.0, 5));
  const MigrationPanel panel = aggregate_events(sim.events, 10.0, 30, 10);
  EXPECT_TRUE(validate_panel(panel).empty());
  std::int64_t jumps = 0;
  for (const auto& n : panel.counts) jumps += n.sum() - n.trace();
  EXPECT_EQ(jumps, static_cast<std::int64_t>(sim.events.events.size()));
}
