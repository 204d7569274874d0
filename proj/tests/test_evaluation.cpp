#include <gtest/gtest.h>

#include "ratingfilter/evaluation.hpp"
#include "ratingfilter/io.hpp"
#include "support.hpp"

using namespace ratingfilter;

TEST(RSquared, Examples) {
  const std::vector<double> realized{0.0, 1.0, 2.0, 3.0};
  EXPECT_NEAR(r_squared(realized, realized), 1.0, 1e-15);
  EXPECT_NEAR(r_squared({1.5, 1.5, 1.5, 1.5}, realized), 0.0, 1e-15);
  EXPECT_NEAR(r_squared({3.0, 2.0, 2.0, 1.0}, realized), -1.8, 1e-15);
}

TEST(RSquared, Errors) {
  EXPECT_THROW(r_squared({0.1, 0.2}, {0.3, 0.3}), DataError);
  EXPECT_THROW(r_squared({0.1}, {0.3}), DataError);
  EXPECT_THROW(r_squared({0.1, 0.2}, {0.3, 0.2, 0.1}), DataError);
}

TEST(Evaluate, RealizedRatiosAndSkippedSteps) {
  MigrationPanel panel{2, {}, {}, 30};
  CountVector y(2);
  CountMatrix n(2, 2);
  y << 10, 0;
  n << 8, 2, 0, 0;
  panel.exposures.push_back(y);
  panel.counts.push_back(n);
  y << 8, 2;
  n << 7, 1, 1, 1;
  panel.exposures.push_back(y);
  panel.counts.push_back(n);
  y << 8, 2;
  n << 8, 0, 0, 2;
  panel.exposures.push_back(y);
  panel.counts.push_back(n);
  Matrix f(2, 2);
  f << 0.9, 0.1, 0.3, 0.7;
  const EvaluationReport report = evaluate({f, f, f}, panel);
  ASSERT_EQ(report.transitions.size(), 2u);
  const TransitionSeries& down = report.transitions[0];
  EXPECT_EQ(down.steps, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(down.realized, (std::vector<double>{0.2, 0.125, 0.0}));
  ASSERT_TRUE(down.r2.has_value());
  const TransitionSeries& up = report.transitions[1];
  EXPECT_EQ(up.steps, (std::vector<int>{1, 2}));  // no rating-2 exposure at step 0
  EXPECT_EQ(up.realized, (std::vector<double>{0.5, 0.0}));
  EXPECT_THROW(evaluate({f}, panel), DataError);
  EXPECT_THROW(evaluate({f, f, f}, panel, 2, 1), DataError);
}

TEST(Evaluate, ConstantSeriesHasNoR2) {
  MigrationPanel panel{2, {}, {}, 30};
  CountVector y(2);
  y << 4, 4;
  CountMatrix n(2, 2);
  n << 4, 0, 0, 4;
  panel.exposures.assign(3, y);
  panel.counts.assign(3, n);
  const EvaluationReport report = evaluate(constant_baseline(panel, 0, 3), panel);
  EXPECT_FALSE(report.transitions[0].r2.has_value());
  const Json doc = evaluation_to_json(report);
  EXPECT_TRUE(doc["transitions"][0]["r2"].is_null());
}

TEST(Baseline, PooledFrequencies) {
  MigrationPanel panel{2, {}, {}, 30};
  CountVector y(2);
  CountMatrix n(2, 2);
  y << 10, 5;
  n << 8, 2, 1, 4;
  panel.exposures.push_back(y);
  panel.counts.push_back(n);
  y << 9, 6;
  n << 9, 0, 0, 6;
  panel.exposures.push_back(y);
  panel.counts.push_back(n);
  const Matrix pooled = pooled_frequencies(panel, 0, 2);
  EXPECT_NEAR(pooled(0, 1), 2.0 / 19.0, 1e-15);
  EXPECT_NEAR(pooled(1, 0), 1.0 / 11.0, 1e-15);
  const MigrationPanel tail = slice_panel(panel, 1, 2);
  EXPECT_EQ(tail.steps(), 1);
  EXPECT_EQ(tail.exposures[0], panel.exposures[1]);
  EXPECT_THROW(slice_panel(panel, 1, 3), DataError);
}

TEST(Backtest, DeterministicAndOutOfSample) {
  Rng rng(90);
  const HiddenFactorSpec f = rftest::random_factor(rng, 2);
  const MigrationLaw law = rftest::random_law(rng, 2, 3);
  const MigrationPanel panel = rftest::random_panel(rng, f, law, 90, 40, 5);
  BacktestConfig cfg;
  cfg.m = 2;
  cfg.steps_per_fold = 10;
  cfg.first_cut = 20;
  cfg.em.restarts = 2;
  cfg.em.max_iters = 50;
  cfg.em.seed = 4;
  const BacktestResult a = run_backtest(panel, cfg);
  const BacktestResult b = run_backtest(panel, cfg);
  ASSERT_EQ(a.folds.size(), 2u);
  EXPECT_EQ(a.folds[0].cut, 20);
  EXPECT_EQ(a.folds[1].end, 40);
  EXPECT_EQ(a.filter_report.first_step, 20);
  EXPECT_EQ(backtest_to_json(a).dump(), backtest_to_json(b).dump());
  // The constant forecast of a fold is the pooled frequency before its cut.
  const Matrix pooled = pooled_frequencies(panel, 0, 20);
  EXPECT_LT(rftest::max_abs_diff(a.folds[0].constant_forecasts[3], pooled), 1e-15);
  cfg.first_cut = 1;
  EXPECT_THROW(run_backtest(panel, cfg), ModelError);
}
