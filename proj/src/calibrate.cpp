#include "ratingfilter/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <thread>

#include <fmt/format.h>

#include "em_driver.hpp"
#include "ratingfilter/filter_discrete.hpp"
#include "ratingfilter/random.hpp"

namespace ratingfilter {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint64_t kRestartStream = 100;

// Normalizes exp(values) in place; returns the log of the normalizer.
double normalize_log(Vector& values) {
  const double shift = values.maxCoeff();
  if (shift == kNegInf || !std::isfinite(shift)) {
    throw ImpossibleObservation("observation has zero probability under every hidden state");
  }
  for (Eigen::Index i = 0; i < values.size(); ++i) values(i) = std::exp(values(i) - shift);
  const double mass = values.sum();
  values /= mass;
  return shift + std::log(mass);
}

Vector row_exp_shifted(const Matrix& log_weights, Eigen::Index t, double& shift) {
  shift = log_weights.row(t).maxCoeff();
  if (shift == kNegInf) {
    throw ImpossibleObservation(
        fmt::format("step {} has zero probability under every hidden state", t + 1));
  }
  return (log_weights.row(t).array() - shift).exp().transpose();
}

}  // namespace

void validate_em_config(const EmConfig& cfg, int m, int p) {
  if (m < 1) throw ModelError("state count must be at least 1");
  if (cfg.restarts < 1) throw ModelError("restarts must be at least 1");
  if (cfg.max_iters < 0) throw ModelError("max_iters must be nonnegative");
  if (!(cfg.tol > 0.0)) throw ModelError("tol must be positive");
  if (!(cfg.floor >= 0.0) || cfg.floor * std::max(m, p) >= 1.0) {
    throw ModelError(fmt::format("floor {} must lie in [0, 1/max(m, p))", cfg.floor));
  }
}

Matrix panel_log_weights(const MigrationPanel& panel, const MigrationLaw& law,
                         bool initial_ratings_known) {
  const int steps = panel.steps();
  const int m = law.states();
  Matrix w(steps, m);
  for (int t = 0; t < steps; ++t) w.row(t) = step_log_weights(panel.counts[t], law).transpose();
  if (!initial_ratings_known && steps > 0) {
    // Starting ratings unknown: each entity's first-step rating is drawn from
    // the empirical initial mix, so only the end ratings are informative.
    const CountVector& y = panel.exposures[0];
    const double total = static_cast<double>(y.sum());
    const CountVector ends = panel.counts[0].colwise().sum().transpose();
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int k = 0; k < panel.p; ++k) {
        if (ends(k) == 0) continue;
        double prob = 0.0;
        for (int j = 0; j < panel.p; ++j) {
          prob += static_cast<double>(y(j)) / total * law.per_state[i](j, k);
        }
        acc += prob > 0.0 ? static_cast<double>(ends(k)) * std::log(prob) : kNegInf;
      }
      w(0, i) = acc;
    }
  }
  return w;
}

ForwardResult forward_from_weights(const Matrix& log_weights, const HiddenFactorSpec& factor) {
  const Eigen::Index steps = log_weights.rows();
  const int m = factor.m;
  ForwardResult out;
  out.alpha.resize(steps, m);
  out.log_scale.resize(steps);
  if (steps == 0) return out;
  Vector a(m);
  for (int j = 0; j < m; ++j) {
    a(j) = factor.pi(j) > 0.0 ? std::log(factor.pi(j)) + log_weights(0, j) : kNegInf;
  }
  out.log_scale(0) = normalize_log(a);
  out.alpha.row(0) = a.transpose();
  for (Eigen::Index t = 1; t < steps; ++t) {
    const Vector pred = factor.trans.transpose() * out.alpha.row(t - 1).transpose();
    for (int j = 0; j < m; ++j) {
      a(j) = pred(j) > 0.0 ? std::log(pred(j)) + log_weights(t, j) : kNegInf;
    }
    out.log_scale(t) = out.log_scale(t - 1) + normalize_log(a);
    out.alpha.row(t) = a.transpose();
  }
  out.loglik = out.log_scale(steps - 1);
  return out;
}

BackwardResult backward_from_weights(const Matrix& log_weights,
                                     const HiddenFactorSpec& factor) {
  const Eigen::Index steps = log_weights.rows();
  const int m = factor.m;
  BackwardResult out;
  out.beta.resize(steps, m);
  out.log_scale.resize(steps);
  if (steps == 0) return out;
  out.beta.row(steps - 1).setConstant(1.0 / m);
  out.log_scale(steps - 1) = std::log(static_cast<double>(m));
  for (Eigen::Index t = steps - 2; t >= 0; --t) {
    double shift = 0.0;
    const Vector w = row_exp_shifted(log_weights, t + 1, shift);
    const Vector next = w.cwiseProduct(out.beta.row(t + 1).transpose());
    Vector b = factor.trans * next;
    const double mass = b.sum();
    if (!(mass > 0.0)) {
      throw ImpossibleObservation(
          fmt::format("backward pass collapsed at step {}", t + 1));
    }
    out.beta.row(t) = (b / mass).transpose();
    out.log_scale(t) = out.log_scale(t + 1) + shift + std::log(mass);
  }
  return out;
}

Posteriors posteriors_from_weights(const ForwardResult& fwd, const BackwardResult& bwd,
                                   const Matrix& log_weights, const HiddenFactorSpec& factor) {
  const Eigen::Index steps = log_weights.rows();
  const int m = factor.m;
  if (fwd.alpha.rows() != steps || bwd.beta.rows() != steps) {
    throw ModelError("forward/backward results do not match the observations");
  }
  Posteriors out;
  out.u.resize(steps, m);
  for (Eigen::Index t = 0; t < steps; ++t) {
    Vector joint = fwd.alpha.row(t).transpose().cwiseProduct(bwd.beta.row(t).transpose());
    out.u.row(t) = (joint / joint.sum()).transpose();
  }
  out.v.reserve(steps > 0 ? static_cast<std::size_t>(steps - 1) : 0);
  for (Eigen::Index t = 0; t + 1 < steps; ++t) {
    double shift = 0.0;
    const Vector w = row_exp_shifted(log_weights, t + 1, shift);
    const Vector next = w.cwiseProduct(bwd.beta.row(t + 1).transpose());
    Matrix joint = fwd.alpha.row(t).transpose().asDiagonal() * factor.trans *
                   next.asDiagonal();
    out.v.push_back(joint / joint.sum());
  }
  return out;
}

ForwardResult forward_pass(const MigrationPanel& panel, const HiddenFactorSpec& factor,
                           const MigrationLaw& law, bool initial_ratings_known) {
  require_valid(factor, law);
  require_valid(panel);
  return forward_from_weights(panel_log_weights(panel, law, initial_ratings_known), factor);
}

BackwardResult backward_pass(const MigrationPanel& panel, const HiddenFactorSpec& factor,
                             const MigrationLaw& law, bool initial_ratings_known) {
  require_valid(factor, law);
  require_valid(panel);
  return backward_from_weights(panel_log_weights(panel, law, initial_ratings_known), factor);
}

Posteriors posteriors(const ForwardResult& fwd, const BackwardResult& bwd,
                      const MigrationPanel& panel, const HiddenFactorSpec& factor,
                      const MigrationLaw& law, bool initial_ratings_known) {
  return posteriors_from_weights(fwd, bwd, panel_log_weights(panel, law, initial_ratings_known),
                                 factor);
}

Vector floored_normalize(const Vector& weights, double floor) {
  const Eigen::Index n = weights.size();
  std::vector<bool> pinned(static_cast<std::size_t>(n), false);
  Eigen::Index pinned_count = 0;
  double scale = 0.0;
  for (;;) {
    double free_mass = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!pinned[k]) free_mass += weights(k);
    }
    if (!(free_mass > 0.0)) throw NumericalError("floored_normalize: no positive weight");
    scale = (1.0 - pinned_count * floor) / free_mass;
    bool moved = false;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!pinned[k] && weights(k) * scale < floor) {
        pinned[k] = true;
        ++pinned_count;
        moved = true;
      }
    }
    if (!moved) break;
  }
  Vector out(n);
  for (Eigen::Index k = 0; k < n; ++k) out(k) = pinned[k] ? floor : weights(k) * scale;
  return out;
}

namespace detail {

HiddenFactorSpec update_hidden(const Posteriors& post, const HiddenFactorSpec& previous,
                               const EmConfig& cfg) {
  HiddenFactorSpec next = previous;
  const int m = previous.m;
  if (cfg.update_pi && post.u.rows() > 0) {
    next.pi = floored_normalize(post.u.row(0).transpose(), cfg.floor);
  }
  if (cfg.update_trans && !post.v.empty()) {
    Matrix num = Matrix::Zero(m, m);
    for (const Matrix& v : post.v) num += v;
    for (int j = 0; j < m; ++j) {
      const double den = num.row(j).sum();
      if (den < cfg.floor || !(den > 0.0)) continue;
      next.trans.row(j) = floored_normalize(num.row(j).transpose(), cfg.floor).transpose();
    }
  }
  return next;
}

}  // namespace detail

ModelInit m_step(const Posteriors& post, const MigrationPanel& panel,
                 const HiddenFactorSpec& previous_factor, const MigrationLaw& previous_law,
                 const MStepOptions& options) {
  EmConfig cfg;
  cfg.floor = options.floor;
  cfg.update_pi = options.update_pi;
  cfg.update_trans = options.update_trans;
  ModelInit out{detail::update_hidden(post, previous_factor, cfg), previous_law};
  if (!options.update_law) return out;
  const int m = previous_factor.m;
  const int p = panel.p;
  if (post.u.rows() != panel.steps()) throw ModelError("posteriors do not match the panel");
  for (int i = 0; i < m; ++i) {
    Matrix num = Matrix::Zero(p, p);
    for (int t = 0; t < panel.steps(); ++t) {
      num += post.u(t, i) * panel.counts[t].cast<double>();
    }
    for (int k = 0; k < p; ++k) {
      const double den = num.row(k).sum();
      if (den < options.floor || !(den > 0.0)) continue;
      out.law.per_state[i].row(k) =
          floored_normalize(num.row(k).transpose(), options.floor).transpose();
    }
  }
  return out;
}

ModelInit random_start(int m, int p, std::uint64_t seed, double floor) {
  Rng rng(seed);
  ModelInit init;
  init.factor.m = m;
  init.factor.mode = Mode::Discrete;
  init.factor.pi = floored_normalize(rng.simplex(m), floor);
  init.factor.trans.resize(m, m);
  for (int i = 0; i < m; ++i) {
    init.factor.trans.row(i) = floored_normalize(rng.simplex(m), floor).transpose();
  }
  init.law.p = p;
  for (int h = 0; h < m; ++h) {
    Matrix l(p, p);
    for (int j = 0; j < p; ++j) l.row(j) = floored_normalize(rng.simplex(p), floor).transpose();
    init.law.per_state.push_back(std::move(l));
  }
  return init;
}

namespace detail {

namespace {

struct RestartOutcome {
  RestartSummary summary;
  ModelInit model;
};

RestartOutcome run_restart(const EmProblem& problem, ModelInit model, const EmConfig& cfg) {
  RestartOutcome out;
  try {
    Matrix logw = problem.log_weights(model.law);
    ForwardResult fwd = forward_from_weights(logw, model.factor);
    double ll = fwd.loglik;
    out.summary.loglik_trace.push_back(ll);
    for (int it = 0; it < cfg.max_iters; ++it) {
      const BackwardResult bwd = backward_from_weights(logw, model.factor);
      const Posteriors post = posteriors_from_weights(fwd, bwd, logw, model.factor);
      ModelInit next{update_hidden(post, model.factor, cfg), model.law};
      if (cfg.update_law) next.law = problem.update_law(post, model.law);
      const Matrix next_logw = problem.log_weights(next.law);
      ForwardResult next_fwd = forward_from_weights(next_logw, next.factor);
      const double next_ll = next_fwd.loglik;
      model = std::move(next);
      logw = next_logw;
      fwd = std::move(next_fwd);
      out.summary.loglik_trace.push_back(next_ll);
      out.summary.iterations = it + 1;
      const double gain = next_ll - ll;
      ll = next_ll;
      if (gain <= cfg.tol * std::max(1.0, std::abs(ll))) {
        out.summary.converged = true;
        break;
      }
    }
    out.summary.final_loglik = ll;
  } catch (const NumericalError& e) {
    out.summary.failed = true;
    out.summary.error = e.what();
    out.summary.final_loglik = kNegInf;
  }
  out.model = std::move(model);
  return out;
}

}  // namespace

CalibrationResult run_em(const EmProblem& problem, int m, const EmConfig& cfg) {
  validate_em_config(cfg, m, problem.p);
  std::vector<ModelInit> starts;
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < cfg.restarts; ++r) {
    const std::uint64_t seed = derive_seed(cfg.seed, kRestartStream + r);
    seeds.push_back(seed);
    if (r == 0 && cfg.start) {
      starts.push_back(*cfg.start);
      starts.back().factor.mode = Mode::Discrete;
    } else {
      starts.push_back(random_start(m, problem.p, seed, cfg.floor));
    }
  }
  if (cfg.start) require_valid(starts[0].factor, starts[0].law);

  const int threads = std::max(
      1, cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency()));
  std::vector<RestartOutcome> outcomes(static_cast<std::size_t>(cfg.restarts));
  for (int begin = 0; begin < cfg.restarts; begin += threads) {
    const int end = std::min(cfg.restarts, begin + threads);
    if (end - begin == 1) {
      outcomes[begin] = run_restart(problem, starts[begin], cfg);
      continue;
    }
    std::vector<std::future<RestartOutcome>> batch;
    for (int r = begin; r < end; ++r) {
      batch.push_back(std::async(std::launch::async, run_restart, std::cref(problem),
                                 starts[r], std::cref(cfg)));
    }
    for (int r = begin; r < end; ++r) outcomes[r] = batch[r - begin].get();
  }

  CalibrationResult result;
  int best = -1;
  for (int r = 0; r < cfg.restarts; ++r) {
    outcomes[r].summary.seed = seeds[r];
    result.restarts.push_back(outcomes[r].summary);
    if (outcomes[r].summary.failed) continue;
    if (best < 0 || outcomes[r].summary.final_loglik > outcomes[best].summary.final_loglik) {
      best = r;
    }
  }
  if (best < 0) {
    throw NumericalError("every EM restart failed: " + outcomes[0].summary.error);
  }
  result.best_restart = best;
  result.factor = outcomes[best].model.factor;
  result.law = outcomes[best].model.law;
  result.loglik_trace = outcomes[best].summary.loglik_trace;
  result.converged = outcomes[best].summary.converged;
  sort_states_by_risk(result.factor, result.law);
  return result;
}

}  // namespace detail

CalibrationResult em_fit(const MigrationPanel& panel, int m, const EmConfig& cfg) {
  require_valid(panel);
  if (panel.steps() < 1) throw DataError("em_fit needs at least one panel step");
  detail::EmProblem problem;
  problem.p = panel.p;
  problem.log_weights = [&panel](const MigrationLaw& law) {
    return panel_log_weights(panel, law, true);
  };
  problem.update_law = [&panel, &cfg](const Posteriors& post, const MigrationLaw& prev) {
    HiddenFactorSpec dummy;
    dummy.m = prev.states();
    dummy.pi = Vector::Constant(dummy.m, 1.0 / dummy.m);
    dummy.trans = Matrix::Identity(dummy.m, dummy.m);
    MStepOptions opts;
    opts.floor = cfg.floor;
    opts.update_pi = false;
    opts.update_trans = false;
    return m_step(post, panel, dummy, prev, opts).law;
  };
  return detail::run_em(problem, m, cfg);
}

}  // namespace ratingfilter
