#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "em_driver.hpp"
#include "ratingfilter/calibrate.hpp"

namespace ratingfilter {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Sufficient statistics of one hidden state's share of the picker
// likelihood. Consecutive no-jump intervals with equal exposures are merged.
struct PickerStats {
  Matrix jumps;         // sum of weights of intervals with a j -> k migration
  Vector stayer_power;  // AllStayers: exponent of L^{jj} on migration intervals
  Vector group_weight;
  Vector group_base;   // 1 - n / n_bar
  Matrix group_share;  // rows Y / n_bar
};

PickerStats collect_stats(const FineGrid& grid, const Vector& weights, double n_bar,
                          StayerConvention convention) {
  const int p = grid.p;
  PickerStats s;
  s.jumps = Matrix::Zero(p, p);
  s.stayer_power = Vector::Zero(p);
  std::vector<double> weight;
  std::vector<const CountVector*> members;
  const CountVector* last = nullptr;
  for (int t = 0; t < grid.intervals(); ++t) {
    const double w = weights(t);
    const CountVector& y = grid.exposures[t];
    if (grid.jump_from[t] >= 0) {
      const int j = grid.jump_from[t];
      s.jumps(j, grid.jump_to[t]) += w;
      if (convention == StayerConvention::AllStayers) {
        Vector power = y.cast<double>();
        power(j) -= 1.0;
        s.stayer_power += w * power;
      }
      last = nullptr;
      continue;
    }
    if (last != nullptr && *last == y) {
      weight.back() += w;
      continue;
    }
    weight.push_back(w);
    members.push_back(&y);
    last = &y;
  }
  const auto groups = static_cast<Eigen::Index>(weight.size());
  s.group_weight = Eigen::Map<const Vector>(weight.data(), groups);
  s.group_base.resize(groups);
  s.group_share.resize(groups, p);
  for (Eigen::Index g = 0; g < groups; ++g) {
    const Vector y = members[g]->cast<double>();
    s.group_base(g) = 1.0 - y.sum() / n_bar;
    s.group_share.row(g) = y.transpose() / n_bar;
  }
  return s;
}

double stats_objective(const PickerStats& s, const Matrix& law) {
  double q = 0.0;
  const Eigen::Index p = law.rows();
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index k = 0; k < p; ++k) {
      if (s.jumps(j, k) == 0.0) continue;
      if (!(law(j, k) > 0.0)) return kNegInf;
      q += s.jumps(j, k) * std::log(law(j, k));
    }
    if (s.stayer_power(j) != 0.0) {
      if (!(law(j, j) > 0.0)) return kNegInf;
      q += s.stayer_power(j) * std::log(law(j, j));
    }
  }
  const Vector stay = s.group_base + s.group_share * law.diagonal();
  for (Eigen::Index g = 0; g < stay.size(); ++g) {
    if (s.group_weight(g) == 0.0) continue;
    if (!(stay(g) > 0.0)) return kNegInf;
    q += s.group_weight(g) * std::log(stay(g));
  }
  return q;
}

}  // namespace

FineGrid to_fine_grid(const EventStream& events, double interval_length) {
  if (!(interval_length > 0.0)) throw DataError("interval length must be positive");
  const int p = events.p();
  const int count =
      std::max(1, static_cast<int>(std::ceil(events.horizon / interval_length - 1e-9)));
  FineGrid grid;
  grid.p = p;
  grid.interval_length = interval_length;
  grid.exposures.reserve(count);
  grid.jump_from.assign(count, -1);
  grid.jump_to.assign(count, -1);
  CountVector y = events.initial_exposures;
  std::size_t next_event = 0;
  std::size_t next_reset = 0;
  for (int n = 0; n < count; ++n) {
    const double start = n * interval_length;
    const double end = (n + 1) * interval_length;
    while (next_reset < events.resets.size() && events.resets[next_reset].time <= start) {
      y = events.resets[next_reset++].exposures;
    }
    grid.exposures.push_back(y);
    while (next_event < events.events.size() && events.events[next_event].time < end) {
      const MigrationEvent& ev = events.events[next_event++];
      if (grid.jump_from[n] >= 0) {
        throw DataError(fmt::format(
            "interval {} ([{}, {})) holds more than one migration; refine the grid", n + 1,
            start, end));
      }
      grid.jump_from[n] = ev.from;
      grid.jump_to[n] = ev.to;
      y(ev.from) -= 1;
      y(ev.to) += 1;
    }
  }
  return grid;
}

double max_population(const FineGrid& grid) {
  std::int64_t best = 0;
  for (const CountVector& y : grid.exposures) best = std::max(best, y.sum());
  return static_cast<double>(best);
}

Matrix picker_log_weights(const FineGrid& grid, const MigrationLaw& law, double n_bar,
                          StayerConvention convention) {
  const int m = law.states();
  if (law.p != grid.p) throw ModelError("grid / law rating count mismatch");
  if (!(n_bar > 0.0)) throw ModelError("n_bar must be positive");
  Matrix w(grid.intervals(), m);
  for (int t = 0; t < grid.intervals(); ++t) {
    const CountVector& y = grid.exposures[t];
    const double n = static_cast<double>(y.sum());
    if (n > n_bar) {
      throw ModelError(fmt::format("interval {}: population {} exceeds n_bar {}", t + 1, n,
                                   n_bar));
    }
    const int j = grid.jump_from[t];
    for (int h = 0; h < m; ++h) {
      const Matrix& l = law.per_state[h];
      if (j < 0) {
        const double stay = (1.0 - n / n_bar) + y.cast<double>().dot(l.diagonal()) / n_bar;
        w(t, h) = stay > 0.0 ? std::log(stay) : kNegInf;
        continue;
      }
      const double jump = l(j, grid.jump_to[t]);
      double value = jump > 0.0 ? std::log(jump) - std::log(n_bar) : kNegInf;
      if (convention == StayerConvention::AllStayers && value != kNegInf) {
        for (int r = 0; r < grid.p; ++r) {
          const double power = static_cast<double>(y(r)) - (r == j ? 1.0 : 0.0);
          if (power == 0.0) continue;
          value += l(r, r) > 0.0 ? power * std::log(l(r, r)) : kNegInf;
        }
      }
      w(t, h) = value;
    }
  }
  return w;
}

Matrix picker_weights(const FineGrid& grid, const MigrationLaw& law, double n_bar,
                      StayerConvention convention) {
  return picker_log_weights(grid, law, n_bar, convention).array().exp();
}

double picker_state_objective(const FineGrid& grid, const Vector& state_weights,
                              const Matrix& law, double n_bar, StayerConvention convention) {
  if (state_weights.size() != grid.intervals()) {
    throw ModelError("state weights do not match the grid");
  }
  return stats_objective(collect_stats(grid, state_weights, n_bar, convention), law);
}

namespace {

// For fixed diagonal d, the best off-diagonal split of row r puts the
// remaining mass proportionally to the jump weights (every entry floored).
// That leaves a concave problem in d on a box, solved by projected Newton.
struct DiagonalProblem {
  const PickerStats& stats;
  double floor;
  Eigen::Index p;
  Matrix shares;  // off-diagonal proportions per row (zero on the diagonal)

  DiagonalProblem(const PickerStats& s, double fl, Eigen::Index dim)
      : stats(s), floor(fl), p(dim), shares(Matrix::Zero(dim, dim)) {
    for (Eigen::Index r = 0; r < p; ++r) {
      double total = 0.0;
      for (Eigen::Index k = 0; k < p; ++k) {
        if (k != r) total += s.jumps(r, k);
      }
      for (Eigen::Index k = 0; k < p; ++k) {
        if (k == r) continue;
        shares(r, k) = total > 0.0 ? s.jumps(r, k) / total : 1.0 / static_cast<double>(p - 1);
      }
    }
  }

  double lower() const { return floor; }
  double upper() const { return 1.0 - static_cast<double>(p - 1) * floor; }

  Matrix law(const Vector& d) const {
    Matrix out(p, p);
    for (Eigen::Index r = 0; r < p; ++r) {
      const double rest = upper() - d(r);
      for (Eigen::Index k = 0; k < p; ++k) {
        out(r, k) = k == r ? d(r) : floor + rest * shares(r, k);
      }
    }
    return out;
  }

  // Value, gradient and Hessian in d.
  double evaluate(const Vector& d, Vector* grad, Matrix* hess) const {
    const Matrix l = law(d);
    const double value = stats_objective(stats, l);
    if (!grad) return value;
    grad->setZero(p);
    hess->setZero(p, p);
    if (value == kNegInf) return value;
    for (Eigen::Index r = 0; r < p; ++r) {
      const double self = stats.jumps(r, r) + stats.stayer_power(r);
      (*grad)(r) += self / d(r);
      (*hess)(r, r) -= self / (d(r) * d(r));
      for (Eigen::Index k = 0; k < p; ++k) {
        if (k == r || stats.jumps(r, k) == 0.0) continue;
        const double a = shares(r, k) / l(r, k);
        (*grad)(r) -= stats.jumps(r, k) * a;
        (*hess)(r, r) -= stats.jumps(r, k) * a * a;
      }
    }
    const Vector stay = stats.group_base + stats.group_share * d;
    const Vector ratio = (stats.group_weight.array() == 0.0)
                             .select(0.0, stats.group_weight.array() / stay.array());
    *grad += stats.group_share.transpose() * ratio;
    const Vector curv = (stats.group_weight.array() == 0.0)
                            .select(0.0, ratio.array() / stay.array());
    hess->noalias() -= stats.group_share.transpose() * curv.asDiagonal() * stats.group_share;
    return value;
  }
};

}  // namespace

Matrix optimize_picker_law(const FineGrid& grid, const Vector& state_weights,
                           const Matrix& start, double n_bar, StayerConvention convention,
                           const LawOptimizerOptions& options, LawOptimizerReport* report) {
  const PickerStats stats = collect_stats(grid, state_weights, n_bar, convention);
  const Eigen::Index p = start.rows();
  const double before = stats_objective(stats, start);
  if (p < 2) {
    if (report) *report = {before, before, 0, 0.0, false};
    return start;
  }
  const DiagonalProblem problem(stats, options.floor, p);
  const double lo = problem.lower();
  const double hi = problem.upper();

  Vector d = start.diagonal().cwiseMax(lo).cwiseMin(hi);
  Vector grad;
  Matrix hess;
  double q = problem.evaluate(d, &grad, &hess);
  if (q == kNegInf) {
    d.setConstant(0.5 * (lo + hi));
    q = problem.evaluate(d, &grad, &hess);
  }
  int it = 0;
  double pg_norm = 0.0;
  for (; it < options.max_iters && q != kNegInf; ++it) {
    // Variables pinned at a bound with the gradient pointing outward.
    std::vector<Eigen::Index> free;
    pg_norm = 0.0;
    for (Eigen::Index r = 0; r < p; ++r) {
      const bool pinned = (d(r) <= lo && grad(r) < 0.0) || (d(r) >= hi && grad(r) > 0.0);
      if (!pinned) {
        free.push_back(r);
        pg_norm += grad(r) * grad(r);
      }
    }
    pg_norm = std::sqrt(pg_norm);
    if (free.empty() || pg_norm < options.gradient_tol * std::max(1.0, std::abs(q))) break;

    const auto nf = static_cast<Eigen::Index>(free.size());
    Matrix neg_h(nf, nf);
    Vector g(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      g(a) = grad(free[a]);
      for (Eigen::Index b = 0; b < nf; ++b) neg_h(a, b) = -hess(free[a], free[b]);
    }
    neg_h.diagonal().array() += 1e-12 * (1.0 + neg_h.diagonal().cwiseAbs().maxCoeff());
    Eigen::LDLT<Matrix> ldlt(neg_h);
    Vector dir = ldlt.solve(g);
    if (ldlt.info() != Eigen::Success || !dir.allFinite() || g.dot(dir) <= 0.0) dir = g;

    bool moved = false;
    for (double t = 1.0; t > 1e-18; t *= 0.5) {
      Vector trial = d;
      for (Eigen::Index a = 0; a < nf; ++a) {
        trial(free[a]) = std::clamp(d(free[a]) + t * dir(a), lo, hi);
      }
      const double gain_bound = grad.dot(trial - d);
      Vector trial_grad;
      Matrix trial_hess;
      const double trial_q = problem.evaluate(trial, &trial_grad, &trial_hess);
      if (trial_q > q && trial_q >= q + 1e-4 * gain_bound) {
        d = trial;
        q = trial_q;
        grad = trial_grad;
        hess = trial_hess;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }

  const Matrix law = problem.law(d);
  const bool accept = q != kNegInf && q >= before;
  if (report) {
    report->objective_before = before;
    report->objective_after = accept ? q : before;
    report->iterations = it;
    report->gradient_norm = pg_norm;
    report->accepted = accept;
  }
  return accept ? law : start;
}

void picker_to_intensities(const HiddenFactorSpec& factor, const MigrationLaw& law,
                           double interval_length, double n_bar, HiddenFactorSpec& generator,
                           MigrationLaw& intensities) {
  auto to_rates = [](Matrix mat, double scale) {
    mat -= Matrix::Identity(mat.rows(), mat.cols());
    mat /= scale;
    for (Eigen::Index j = 0; j < mat.rows(); ++j) {
      mat(j, j) = 0.0;
      mat(j, j) = -mat.row(j).sum();
    }
    return mat;
  };
  generator = factor;
  generator.mode = Mode::Continuous;
  generator.trans = to_rates(factor.trans, interval_length);
  intensities.p = law.p;
  intensities.per_state.clear();
  for (const Matrix& l : law.per_state) {
    intensities.per_state.push_back(to_rates(l, n_bar * interval_length));
  }
}

MigrationLaw intensities_to_picker(const MigrationLaw& intensities, double interval_length,
                                   double n_bar) {
  MigrationLaw out{intensities.p, {}};
  for (const Matrix& g : intensities.per_state) {
    out.per_state.push_back(generator_to_probabilities(g, n_bar * interval_length));
  }
  return out;
}

ModelInit picker_start(const ModelInit& model, double interval_length, double n_bar) {
  if (model.factor.mode == Mode::Discrete) return model;
  require_valid(model.factor, model.law);
  ModelInit out{factor_to_probabilities(model.factor, interval_length),
                intensities_to_picker(model.law, interval_length, n_bar)};
  out.factor.mode = Mode::Discrete;
  require_valid(out.factor, out.law);
  return out;
}

ContinuousCalibration em_fit_continuous(const FineGrid& grid, int m, const EmConfig& cfg,
                                        const ContinuousEmOptions& options) {
  if (grid.intervals() < 1) throw DataError("empty fine grid");
  const double n_bar = options.n_bar > 0.0 ? options.n_bar : max_population(grid);
  if (!(n_bar > 0.0)) throw DataError("fine grid has no exposed entities");
  LawOptimizerOptions optimizer = options.optimizer;
  optimizer.floor = cfg.floor;

  detail::EmProblem problem;
  problem.p = grid.p;
  problem.log_weights = [&grid, n_bar, &options](const MigrationLaw& law) {
    return picker_log_weights(grid, law, n_bar, options.convention);
  };
  problem.update_law = [&grid, n_bar, &options, optimizer](const Posteriors& post,
                                                           const MigrationLaw& prev) {
    MigrationLaw next = prev;
    for (int i = 0; i < prev.states(); ++i) {
      next.per_state[i] = optimize_picker_law(grid, post.u.col(i), prev.per_state[i], n_bar,
                                              options.convention, optimizer);
    }
    return next;
  };

  ContinuousCalibration out;
  out.fine = detail::run_em(problem, m, cfg);
  out.interval_length = grid.interval_length;
  out.n_bar = n_bar;
  picker_to_intensities(out.fine.factor, out.fine.law, grid.interval_length, n_bar,
                        out.generator, out.intensities);
  return out;
}

}  // namespace ratingfilter
