// Adapted Baum-Welch calibration.
//
// Indexing used throughout (0-based): panel step t is driven by the hidden
// state at time t, so
//   alpha row t    ~ P(Z_0..Z_{t+1}, Theta_t = j)
//   beta row t     ~ P(Z_{t+2}..Z_T | Z_{t+1}, Theta_t = j)
//   u row t        = P(Theta_t = j | all data),            t = 0..T-1
//   v[t](k, j)     = P(Theta_t = k, Theta_{t+1} = j | all data), t = 0..T-2
// Rows of alpha and beta are stored normalized, with log scale factors.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ratingfilter/model.hpp"

namespace ratingfilter {

enum class EmMode { Discrete, ContinuousAdapted };

struct ModelInit {
  HiddenFactorSpec factor;
  MigrationLaw law;
};

struct EmConfig {
  int restarts = 10;
  int max_iters = 500;
  // Stop when the log-likelihood gain is at most tol * max(1, |log L|).
  double tol = 1e-8;
  std::uint64_t seed = 0;
  // Lower bound on every fitted probability.
  double floor = 1e-12;
  EmMode mode = EmMode::Discrete;
  bool update_pi = true;
  bool update_trans = true;
  bool update_law = true;
  // When set, restart 0 starts here instead of a uniform draw.
  std::optional<ModelInit> start;
  // 0 = hardware concurrency.
  int threads = 0;
};

void validate_em_config(const EmConfig& cfg, int m, int p);

struct RestartSummary {
  std::uint64_t seed = 0;
  double final_loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  bool failed = false;
  std::string error;
  std::vector<double> loglik_trace;
};

struct CalibrationResult {
  HiddenFactorSpec factor;
  MigrationLaw law;
  std::vector<double> loglik_trace;
  int best_restart = 0;
  bool converged = false;
  std::vector<RestartSummary> restarts;
};

// Per-step log observation weights, rows = steps, cols = hidden states.
// With initial_ratings_known == false the first step uses the empirical
// initial rating mix instead of the observed starting ratings.
Matrix panel_log_weights(const MigrationPanel& panel, const MigrationLaw& law,
                         bool initial_ratings_known = true);

struct ForwardResult {
  Matrix alpha;
  // alpha_true(t, j) = alpha(t, j) * exp(log_scale(t)).
  Vector log_scale;
  double loglik = 0.0;
};

struct BackwardResult {
  Matrix beta;
  Vector log_scale;
};

struct Posteriors {
  Matrix u;
  std::vector<Matrix> v;
};

ForwardResult forward_from_weights(const Matrix& log_weights, const HiddenFactorSpec& factor);
BackwardResult backward_from_weights(const Matrix& log_weights,
                                     const HiddenFactorSpec& factor);
Posteriors posteriors_from_weights(const ForwardResult& fwd, const BackwardResult& bwd,
                                   const Matrix& log_weights, const HiddenFactorSpec& factor);

ForwardResult forward_pass(const MigrationPanel& panel, const HiddenFactorSpec& factor,
                           const MigrationLaw& law, bool initial_ratings_known = true);
BackwardResult backward_pass(const MigrationPanel& panel, const HiddenFactorSpec& factor,
                             const MigrationLaw& law, bool initial_ratings_known = true);
Posteriors posteriors(const ForwardResult& fwd, const BackwardResult& bwd,
                      const MigrationPanel& panel, const HiddenFactorSpec& factor,
                      const MigrationLaw& law, bool initial_ratings_known = true);

// argmax of sum_k w_k log x_k over the simplex with x_k >= floor.
Vector floored_normalize(const Vector& weights, double floor);

struct MStepOptions {
  double floor = 1e-12;
  bool update_pi = true;
  bool update_trans = true;
  bool update_law = true;
};

// Closed-form maximization. Rows whose expected exposure is below the floor
// keep their previous values.
ModelInit m_step(const Posteriors& post, const MigrationPanel& panel,
                 const HiddenFactorSpec& previous_factor, const MigrationLaw& previous_law,
                 const MStepOptions& options = {});

// Uniform draw of (pi, K, L) on their simplices, floored.
ModelInit random_start(int m, int p, std::uint64_t seed, double floor);

CalibrationResult em_fit(const MigrationPanel& panel, int m, const EmConfig& cfg);

// ---------------------------------------------------------------------------
// Continuous adaptation: fine grid with at most one migration per interval
// and the uniform-picker likelihood.

struct FineGrid {
  int p = 0;
  double interval_length = 0.0;
  // Exposures at the start of each interval.
  std::vector<CountVector> exposures;
  // Migration inside the interval, or -1 / -1 when none.
  std::vector<int> jump_from;
  std::vector<int> jump_to;

  int intervals() const { return static_cast<int>(exposures.size()); }
};

FineGrid to_fine_grid(const EventStream& events, double interval_length);

// Largest total exposure over the grid.
double max_population(const FineGrid& grid);

enum class StayerConvention {
  // Only the picked entity contributes a factor of L.
  PickedOnly,
  // Every non-jumping entity also contributes its diagonal entry of L on
  // intervals with a migration.
  AllStayers,
};

Matrix picker_log_weights(const FineGrid& grid, const MigrationLaw& law, double n_bar,
                          StayerConvention convention = StayerConvention::PickedOnly);
Matrix picker_weights(const FineGrid& grid, const MigrationLaw& law, double n_bar,
                      StayerConvention convention = StayerConvention::PickedOnly);

// Expected complete-data log-likelihood contribution of one hidden state's
// law, sum_t u_t log W_t (up to a constant).
double picker_state_objective(const FineGrid& grid, const Vector& state_weights,
                              const Matrix& law, double n_bar,
                              StayerConvention convention = StayerConvention::PickedOnly);

struct LawOptimizerOptions {
  double floor = 1e-12;
  // Stop when the projected gradient norm is below gradient_tol * max(1, |Q|).
  double gradient_tol = 1e-8;
  int max_iters = 5000;
};

struct LawOptimizerReport {
  double objective_before = 0.0;
  double objective_after = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool accepted = false;
};

// Maximizes picker_state_objective over row-stochastic matrices with every
// entry >= floor. Off-diagonal entries of a row are proportional to their
// jump weights; the diagonal is found by projected Newton. Keeps `start`
// when no improvement is found.
Matrix optimize_picker_law(const FineGrid& grid, const Vector& state_weights,
                           const Matrix& start, double n_bar, StayerConvention convention,
                           const LawOptimizerOptions& options,
                           LawOptimizerReport* report = nullptr);

struct ContinuousEmOptions {
  StayerConvention convention = StayerConvention::PickedOnly;
  // Non-positive: use max_population(grid).
  double n_bar = 0.0;
  LawOptimizerOptions optimizer;
};

struct ContinuousCalibration {
  // Fitted on the fine grid: K per interval, L per picked entity.
  CalibrationResult fine;
  double interval_length = 0.0;
  double n_bar = 0.0;
  // Converted to rates per unit time: k = (K - I) / dt and
  // l = (L - I) / (n_bar * dt).
  HiddenFactorSpec generator;
  MigrationLaw intensities;
};

// Fine-grid starting point from a rate model: K = I + k dt and
// L = I + l n_bar dt. Discrete-mode models are returned unchanged.
ModelInit picker_start(const ModelInit& model, double interval_length, double n_bar);

ContinuousCalibration em_fit_continuous(const FineGrid& grid, int m, const EmConfig& cfg,
                                        const ContinuousEmOptions& options = {});

// Converts a fine-grid picker fit to continuous-time rates.
void picker_to_intensities(const HiddenFactorSpec& factor, const MigrationLaw& law,
                           double interval_length, double n_bar,
                           HiddenFactorSpec& generator, MigrationLaw& intensities);

// Inverse of picker_to_intensities for the law: L = I + l * n_bar * dt.
MigrationLaw intensities_to_picker(const MigrationLaw& intensities, double interval_length,
                                   double n_bar);

}  // namespace ratingfilter
