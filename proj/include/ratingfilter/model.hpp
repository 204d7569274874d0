// Core domain types for hidden-factor rating migration models.
//
// Hidden states and ratings are 0-based in code. File formats use 1-based
// labels; the conversion happens in io.cpp.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ratingfilter {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using CountVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;
using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

// Error categories. The CLI maps them onto exit codes 1, 2 and 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An observation that has probability zero under every hidden state.
class ImpossibleObservation : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

enum class Mode { Discrete, Continuous };

const char* to_string(Mode mode);
Mode parse_mode(const std::string& text);

// Latent Markov chain. In discrete mode `trans` is row-stochastic
// (trans(i, h) = P(next = h | current = i)); in continuous mode it is a
// generator whose rows sum to zero.
struct HiddenFactorSpec {
  int m = 0;
  Vector pi;
  Matrix trans;
  Mode mode = Mode::Discrete;
};

// Per-hidden-state rating dynamics: p x p stochastic matrices (discrete) or
// intensity generators (continuous), one per hidden state.
struct MigrationLaw {
  int p = 0;
  std::vector<Matrix> per_state;

  int states() const { return static_cast<int>(per_state.size()); }
};

// Aggregated panel. Step t (0-based here, 1-based in files) holds the
// exposures at the start of the interval and the endpoint-to-endpoint
// transition counts during it; the diagonal counts stayers.
struct MigrationPanel {
  int p = 0;
  std::vector<CountVector> exposures;
  std::vector<CountMatrix> counts;
  int step_length_days = 1;

  int steps() const { return static_cast<int>(counts.size()); }
};

struct FilterState {
  Vector probs;
  double time = 0.0;
};

struct MigrationEvent {
  double time = 0.0;
  int from = 0;
  int to = 0;
  // Exposures just before the jump.
  CountVector exposures;
};

// Exposure change that is not explained by a migration (entry or exit at a
// step boundary).
struct ExposureReset {
  double time = 0.0;
  CountVector exposures;
};

struct EventStream {
  double horizon = 0.0;
  CountVector initial_exposures;
  std::vector<MigrationEvent> events;
  std::vector<ExposureReset> resets;

  int p() const { return static_cast<int>(initial_exposures.size()); }
};

struct Violation {
  std::string location;
  std::string message;
};

std::vector<Violation> validate_factor(const HiddenFactorSpec& factor);
std::vector<Violation> validate_law(const MigrationLaw& law, Mode mode);
// Every invariant violation of the pair, including dimension mismatches.
std::vector<Violation> validate_model(const HiddenFactorSpec& factor,
                                      const MigrationLaw& law);
std::vector<Violation> validate_panel(const MigrationPanel& panel);
std::vector<Violation> validate_events(const EventStream& events);

// Throws ModelError carrying the first few violations, if any.
void require_valid(const HiddenFactorSpec& factor, const MigrationLaw& law);
void require_valid(const MigrationPanel& panel);

// Rescales onto the simplex. Tiny negative entries from float round-off are
// clamped to zero first.
void renormalize(Vector& probs);

// One-step (discrete) or one-dt Euler (continuous) prediction of the hidden
// law. In continuous mode dt must be positive; large dt is split into
// substeps so the Euler update stays on the simplex.
FilterState evolve_prior(const FilterState& state, const HiddenFactorSpec& factor,
                         double dt = 1.0);

// exp(trans^T dt) applied to the state; continuous mode only.
FilterState evolve_prior_exact(const FilterState& state,
                               const HiddenFactorSpec& factor, double dt);

// Mixture of the conditional transition matrices under the filtered law.
Matrix predict_transition_probs(const MigrationLaw& law, const FilterState& state);

enum class Conversion { Linear, Exponential };

// Intensity <-> probability conversion over a step of length `delta`.
// Linear uses P = I + G * delta (and G = (P - I) / delta).
Matrix generator_to_probabilities(const Matrix& generator, double delta,
                                  Conversion conversion = Conversion::Linear);
Matrix probabilities_to_generator(const Matrix& probs, double delta);
MigrationLaw law_to_probabilities(const MigrationLaw& law, double delta,
                                  Conversion conversion = Conversion::Linear);
HiddenFactorSpec factor_to_probabilities(const HiddenFactorSpec& factor, double delta,
                                         Conversion conversion = Conversion::Linear);

// Mean downgrade mass (probability or intensity of moving to a higher index)
// per hidden state, averaged over the non-terminal ratings.
Vector risk_scores(const MigrationLaw& law);

// Relabels hidden states: new state s is old state perm[s].
void permute_states(HiddenFactorSpec& factor, MigrationLaw& law,
                    const std::vector<int>& perm);

// Permutation that sorts states by increasing risk score (ties by index).
std::vector<int> risk_order(const MigrationLaw& law);
void sort_states_by_risk(HiddenFactorSpec& factor, MigrationLaw& law);

}  // namespace ratingfilter
