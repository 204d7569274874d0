#include "ratingfilter/filter_discrete.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace ratingfilter {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_discrete(const HiddenFactorSpec& factor) {
  if (factor.mode != Mode::Discrete) {
    throw ModelError("discrete filter requires a discrete hidden factor");
  }
}

}  // namespace

Vector step_log_weights(const CountMatrix& counts, const MigrationLaw& law) {
  const int m = law.states();
  Vector w = Vector::Zero(m);
  for (int i = 0; i < m; ++i) {
    const Matrix& l = law.per_state[i];
    for (Eigen::Index j = 0; j < counts.rows(); ++j) {
      for (Eigen::Index k = 0; k < counts.cols(); ++k) {
        const auto n = counts(j, k);
        if (n == 0) continue;
        const double prob = l(j, k);
        if (prob <= 0.0) {
          w(i) = kNegInf;
          break;
        }
        w(i) += static_cast<double>(n) * std::log(prob);
      }
      if (w(i) == kNegInf) break;
    }
  }
  return w;
}

FilterUpdate bayes_then_evolve(const FilterState& state, const Vector& log_weights,
                               const HiddenFactorSpec& factor) {
  const Eigen::Index m = state.probs.size();
  if (log_weights.size() != m || factor.m != m) {
    throw ModelError("filter state / model dimension mismatch");
  }
  double shift = kNegInf;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (state.probs(i) > 0.0 && log_weights(i) > shift) shift = log_weights(i);
  }
  if (shift == kNegInf) {
    throw ImpossibleObservation("observation has zero probability under every hidden state");
  }
  Vector posterior(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    posterior(i) = state.probs(i) > 0.0 ? state.probs(i) * std::exp(log_weights(i) - shift)
                                        : 0.0;
  }
  const double mass = posterior.sum();
  posterior /= mass;
  FilterUpdate out;
  out.log_evidence = shift + std::log(mass);
  out.state.probs = factor.trans.transpose() * posterior;
  renormalize(out.state.probs);
  out.state.time = state.time + 1.0;
  return out;
}

FilterUpdate filter_update_univariate(const FilterState& state, std::int64_t dn,
                                      std::int64_t y, const HiddenFactorSpec& factor,
                                      const Vector& jump_probs) {
  require_discrete(factor);
  if (dn < 0 || y < 0) throw DataError("negative count or exposure");
  if (dn > y) throw DataError(fmt::format("jump count {} exceeds exposure {}", dn, y));
  if (jump_probs.size() != factor.m) throw ModelError("jump probability vector size != m");
  Vector w(factor.m);
  for (int i = 0; i < factor.m; ++i) {
    const double l = jump_probs(i);
    if (l < 0.0 || l > 1.0) throw ModelError("jump probability outside [0, 1]");
    double wi = 0.0;
    if (dn > 0) wi += l > 0.0 ? static_cast<double>(dn) * std::log(l) : kNegInf;
    if (y - dn > 0 && wi != kNegInf) {
      wi += l < 1.0 ? static_cast<double>(y - dn) * std::log1p(-l) : kNegInf;
    }
    w(i) = wi;
  }
  return bayes_then_evolve(state, w, factor);
}

FilterState filter_step_univariate(const FilterState& state, std::int64_t dn,
                                   std::int64_t y, const HiddenFactorSpec& factor,
                                   const Vector& jump_probs) {
  return filter_update_univariate(state, dn, y, factor, jump_probs).state;
}

FilterUpdate filter_update_multivariate(const FilterState& state,
                                        const CountMatrix& counts,
                                        const CountVector& exposures,
                                        const HiddenFactorSpec& factor,
                                        const MigrationLaw& law) {
  require_discrete(factor);
  if (law.states() != factor.m) throw ModelError("law / hidden factor state count mismatch");
  if (counts.rows() != law.p || counts.cols() != law.p || exposures.size() != law.p) {
    throw ModelError("count matrix / law dimension mismatch");
  }
  for (int j = 0; j < law.p; ++j) {
    if ((counts.row(j).array() < 0).any()) throw DataError("negative count");
    if (counts.row(j).sum() != exposures(j)) {
      throw DataError(fmt::format("rating {}: counts sum to {} but exposure is {}", j + 1,
                                  counts.row(j).sum(), exposures(j)));
    }
  }
  return bayes_then_evolve(state, step_log_weights(counts, law), factor);
}

FilterState filter_step_multivariate(const FilterState& state, const CountMatrix& counts,
                                     const CountVector& exposures,
                                     const HiddenFactorSpec& factor,
                                     const MigrationLaw& law) {
  return filter_update_multivariate(state, counts, exposures, factor, law).state;
}

FilterTrajectory run_filter(const MigrationPanel& panel, const HiddenFactorSpec& factor,
                            const MigrationLaw& law, const std::optional<FilterState>& init) {
  require_discrete(factor);
  require_valid(factor, law);
  require_valid(panel);
  if (panel.p != law.p) throw ModelError("panel / law rating count mismatch");
  FilterTrajectory out;
  FilterState state = init ? *init : FilterState{factor.pi, 0.0};
  if (state.probs.size() != factor.m) throw ModelError("initial state size != m");
  out.states.reserve(panel.steps() + 1);
  out.forecasts.reserve(panel.steps() + 1);
  out.states.push_back(state);
  out.forecasts.push_back(predict_transition_probs(law, state));
  for (int t = 0; t < panel.steps(); ++t) {
    FilterUpdate up =
        bayes_then_evolve(state, step_log_weights(panel.counts[t], law), factor);
    out.loglik += up.log_evidence;
    state = up.state;
    out.states.push_back(state);
    out.forecasts.push_back(predict_transition_probs(law, state));
  }
  return out;
}

UnivariateTrajectory run_univariate_filter(const std::vector<std::int64_t>& jumps,
                                           const std::vector<std::int64_t>& exposures,
                                           const HiddenFactorSpec& factor,
                                           const Vector& jump_probs) {
  if (jumps.size() != exposures.size()) throw DataError("series length mismatch");
  UnivariateTrajectory out;
  FilterState state{factor.pi, 0.0};
  out.forecasts.resize(static_cast<Eigen::Index>(jumps.size()) + 1);
  out.states.push_back(state);
  out.forecasts(0) = state.probs.dot(jump_probs);
  for (std::size_t t = 0; t < jumps.size(); ++t) {
    FilterUpdate up = filter_update_univariate(state, jumps[t], exposures[t], factor,
                                               jump_probs);
    out.loglik += up.log_evidence;
    state = up.state;
    out.states.push_back(state);
    out.forecasts(static_cast<Eigen::Index>(t) + 1) = state.probs.dot(jump_probs);
  }
  return out;
}

}  // namespace ratingfilter
