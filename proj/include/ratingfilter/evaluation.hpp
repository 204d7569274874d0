// Forecast evaluation against realized migration ratios, and a rolling
// recalibration backtest.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ratingfilter/calibrate.hpp"
#include "ratingfilter/model.hpp"

namespace ratingfilter {

// 1 - SSE(predicted) / SST(realized about its mean). Throws DataError on
// length mismatch, fewer than two points or a constant realized series.
double r_squared(const std::vector<double>& predicted, const std::vector<double>& realized);

struct TransitionSeries {
  int from = 0;
  int to = 0;
  std::vector<int> steps;  // 0-based panel steps with positive exposure
  std::vector<double> realized;
  std::vector<double> predicted;
  // Empty when the realized series is constant.
  std::optional<double> r2;
};

struct EvaluationReport {
  int p = 0;
  int first_step = 0;
  int last_step = 0;  // exclusive
  std::vector<TransitionSeries> transitions;
};

// forecasts[t] is the forecast for panel step t. Off-diagonal transitions
// only; steps [first, last) with last <= 0 meaning the panel end.
EvaluationReport evaluate(const std::vector<Matrix>& forecasts, const MigrationPanel& panel,
                          int first_step = 0, int last_step = 0);

// Pooled empirical transition matrix over steps [first, last).
Matrix pooled_frequencies(const MigrationPanel& panel, int first_step, int last_step);

// Constant forecast for every step of the panel.
std::vector<Matrix> constant_baseline(const MigrationPanel& panel, int first_step,
                                      int last_step);

MigrationPanel slice_panel(const MigrationPanel& panel, int first_step, int last_step);

struct BacktestConfig {
  int m = 2;
  int steps_per_fold = 12;
  // First calibration window covers steps [0, first_cut).
  int first_cut = 0;
  EmConfig em;
};

struct BacktestFold {
  int cut = 0;
  int end = 0;
  double calibration_loglik = 0.0;
  bool converged = false;
  // Out-of-sample forecasts for steps [cut, end).
  std::vector<Matrix> filter_forecasts;
  std::vector<Matrix> constant_forecasts;
};

struct BacktestResult {
  std::vector<BacktestFold> folds;
  // Out-of-sample evaluation pooled over all folds.
  EvaluationReport filter_report;
  EvaluationReport constant_report;
};

// Calibrates on [0, cut), forecasts (cut, cut + steps_per_fold], rolls the
// cut forward. Folds run concurrently; each is seeded independently of
// scheduling so results are reproducible.
BacktestResult run_backtest(const MigrationPanel& panel, const BacktestConfig& config);

}  // namespace ratingfilter
