#include "ratingfilter/evaluation.hpp"

#include <algorithm>
#include <future>

#include <fmt/format.h>

#include "ratingfilter/filter_discrete.hpp"
#include "ratingfilter/random.hpp"

namespace ratingfilter {

double r_squared(const std::vector<double>& predicted, const std::vector<double>& realized) {
  if (predicted.size() != realized.size()) {
    throw DataError(fmt::format("r_squared: {} predictions for {} realizations",
                                predicted.size(), realized.size()));
  }
  if (realized.size() < 2) throw DataError("r_squared needs at least two points");
  double mean = 0.0;
  for (double r : realized) mean += r;
  mean /= static_cast<double>(realized.size());
  double sst = 0.0;
  double sse = 0.0;
  for (std::size_t i = 0; i < realized.size(); ++i) {
    sst += (realized[i] - mean) * (realized[i] - mean);
    sse += (realized[i] - predicted[i]) * (realized[i] - predicted[i]);
  }
  if (!(sst > 0.0)) throw DataError("r_squared undefined for a constant realized series");
  return 1.0 - sse / sst;
}

EvaluationReport evaluate(const std::vector<Matrix>& forecasts, const MigrationPanel& panel,
                          int first_step, int last_step) {
  require_valid(panel);
  if (last_step <= 0) last_step = panel.steps();
  if (first_step < 0 || first_step > last_step || last_step > panel.steps()) {
    throw DataError(fmt::format("evaluation window [{}, {}) outside the panel", first_step,
                                last_step));
  }
  if (static_cast<int>(forecasts.size()) < last_step) {
    throw DataError(fmt::format("{} forecasts for {} panel steps", forecasts.size(), last_step));
  }
  const int p = panel.p;
  EvaluationReport report;
  report.p = p;
  report.first_step = first_step;
  report.last_step = last_step;
  for (int j = 0; j < p; ++j) {
    for (int k = 0; k < p; ++k) {
      if (j == k) continue;
      TransitionSeries series;
      series.from = j;
      series.to = k;
      for (int t = first_step; t < last_step; ++t) {
        const auto y = panel.exposures[t](j);
        if (y <= 0) continue;
        if (forecasts[t].rows() != p || forecasts[t].cols() != p) {
          throw DataError(fmt::format("forecast {} is not {}x{}", t + 1, p, p));
        }
        series.steps.push_back(t);
        series.realized.push_back(static_cast<double>(panel.counts[t](j, k)) /
                                  static_cast<double>(y));
        series.predicted.push_back(forecasts[t](j, k));
      }
      const bool varies = series.realized.size() >= 2 &&
                          std::any_of(series.realized.begin(), series.realized.end(),
                                      [&](double r) { return r != series.realized.front(); });
      if (varies) series.r2 = r_squared(series.predicted, series.realized);
      report.transitions.push_back(std::move(series));
    }
  }
  return report;
}

Matrix pooled_frequencies(const MigrationPanel& panel, int first_step, int last_step) {
  const int p = panel.p;
  Matrix counts = Matrix::Zero(p, p);
  for (int t = first_step; t < last_step; ++t) counts += panel.counts[t].cast<double>();
  Matrix out = Matrix::Identity(p, p);
  for (int j = 0; j < p; ++j) {
    const double total = counts.row(j).sum();
    if (total > 0.0) out.row(j) = counts.row(j) / total;
  }
  return out;
}

std::vector<Matrix> constant_baseline(const MigrationPanel& panel, int first_step,
                                      int last_step) {
  return std::vector<Matrix>(static_cast<std::size_t>(panel.steps()),
                             pooled_frequencies(panel, first_step, last_step));
}

MigrationPanel slice_panel(const MigrationPanel& panel, int first_step, int last_step) {
  if (first_step < 0 || first_step > last_step || last_step > panel.steps()) {
    throw DataError("panel slice out of range");
  }
  MigrationPanel out;
  out.p = panel.p;
  out.step_length_days = panel.step_length_days;
  out.exposures.assign(panel.exposures.begin() + first_step, panel.exposures.begin() + last_step);
  out.counts.assign(panel.counts.begin() + first_step, panel.counts.begin() + last_step);
  return out;
}

BacktestResult run_backtest(const MigrationPanel& panel, const BacktestConfig& config) {
  require_valid(panel);
  if (config.steps_per_fold < 1) throw ModelError("steps_per_fold must be at least 1");
  if (config.first_cut < 2 || config.first_cut >= panel.steps()) {
    throw ModelError(fmt::format("first cut {} must lie in [2, {})", config.first_cut,
                                 panel.steps()));
  }
  std::vector<std::future<BacktestFold>> pending;
  int fold_index = 0;
  for (int cut = config.first_cut; cut < panel.steps();
       cut += config.steps_per_fold, ++fold_index) {
    pending.push_back(std::async(std::launch::async, [&panel, &config, cut, fold_index] {
      BacktestFold fold;
      fold.cut = cut;
      fold.end = std::min(cut + config.steps_per_fold, panel.steps());
      EmConfig em = config.em;
      em.seed = derive_seed(config.em.seed, 1000 + static_cast<std::uint64_t>(fold_index));
      em.threads = 1;
      const CalibrationResult fit = em_fit(slice_panel(panel, 0, cut), config.m, em);
      fold.calibration_loglik = fit.loglik_trace.back();
      fold.converged = fit.converged;
      const FilterTrajectory traj = run_filter(slice_panel(panel, 0, fold.end), fit.factor,
                                               fit.law);
      const Matrix constant = pooled_frequencies(panel, 0, cut);
      for (int t = cut; t < fold.end; ++t) {
        fold.filter_forecasts.push_back(traj.forecasts[t]);
        fold.constant_forecasts.push_back(constant);
      }
      return fold;
    }));
  }
  BacktestResult result;
  std::vector<Matrix> filter_all(panel.steps(), Matrix::Identity(panel.p, panel.p));
  std::vector<Matrix> constant_all = filter_all;
  for (auto& f : pending) {
    BacktestFold fold = f.get();
    for (int t = fold.cut; t < fold.end; ++t) {
      filter_all[t] = fold.filter_forecasts[t - fold.cut];
      constant_all[t] = fold.constant_forecasts[t - fold.cut];
    }
    result.folds.push_back(std::move(fold));
  }
  result.filter_report = evaluate(filter_all, panel, config.first_cut, panel.steps());
  result.constant_report = evaluate(constant_all, panel, config.first_cut, panel.steps());
  return result;
}

}  // namespace ratingfilter
