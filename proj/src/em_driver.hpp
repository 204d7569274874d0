// Restart/iteration loop shared by the discrete and continuous-adapted EM.
#pragma once

#include <functional>

#include "ratingfilter/calibrate.hpp"

namespace ratingfilter::detail {

struct EmProblem {
  int p = 0;
  // Log observation weights (rows = observation steps) under a law.
  std::function<Matrix(const MigrationLaw&)> log_weights;
  // Law maximization step given smoothing posteriors.
  std::function<MigrationLaw(const Posteriors&, const MigrationLaw&)> update_law;
};

// Pi and K maximization shared by both variants.
HiddenFactorSpec update_hidden(const Posteriors& post, const HiddenFactorSpec& previous,
                               const EmConfig& cfg);

CalibrationResult run_em(const EmProblem& problem, int m, const EmConfig& cfg);

}  // namespace ratingfilter::detail
