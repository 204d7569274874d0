#include "ratingfilter/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <unsupported/Eigen/MatrixFunctions>

namespace ratingfilter {

namespace {

constexpr double kSumTol = 1e-12;
constexpr double kDriftTol = 1e-13;

void check_stochastic(const Matrix& mat, const std::string& name,
                      std::vector<Violation>& out) {
  for (Eigen::Index r = 0; r < mat.rows(); ++r) {
    for (Eigen::Index c = 0; c < mat.cols(); ++c) {
      if (!(mat(r, c) >= 0.0)) {
        out.push_back({fmt::format("{}[{},{}]", name, r + 1, c + 1),
                       fmt::format("negative entry {}", mat(r, c))});
      }
    }
    const double sum = mat.row(r).sum();
    if (!(std::abs(sum - 1.0) <= kSumTol)) {
      out.push_back({fmt::format("{} row {}", name, r + 1),
                     fmt::format("row sum {} != 1", sum)});
    }
  }
}

void check_generator(const Matrix& mat, const std::string& name,
                     std::vector<Violation>& out) {
  for (Eigen::Index r = 0; r < mat.rows(); ++r) {
    for (Eigen::Index c = 0; c < mat.cols(); ++c) {
      if (r != c && !(mat(r, c) >= 0.0)) {
        out.push_back({fmt::format("{}[{},{}]", name, r + 1, c + 1),
                       fmt::format("negative off-diagonal {}", mat(r, c))});
      }
    }
    const double sum = mat.row(r).sum();
    if (!(std::abs(sum) <= kSumTol)) {
      out.push_back({fmt::format("{} row {}", name, r + 1),
                     fmt::format("row sum {} != 0", sum)});
    }
  }
}

}  // namespace

const char* to_string(Mode mode) {
  return mode == Mode::Discrete ? "discrete" : "continuous";
}

Mode parse_mode(const std::string& text) {
  if (text == "discrete") return Mode::Discrete;
  if (text == "continuous") return Mode::Continuous;
  throw ModelError("unknown mode '" + text + "'");
}

std::vector<Violation> validate_factor(const HiddenFactorSpec& factor) {
  std::vector<Violation> out;
  if (factor.m < 1) {
    out.push_back({"m", fmt::format("state count {} < 1", factor.m)});
    return out;
  }
  if (factor.pi.size() != factor.m) {
    out.push_back({"pi", fmt::format("length {} != m = {}", factor.pi.size(), factor.m)});
  } else {
    for (int i = 0; i < factor.m; ++i) {
      if (!(factor.pi(i) >= 0.0)) {
        out.push_back({fmt::format("pi[{}]", i + 1),
                       fmt::format("negative entry {}", factor.pi(i))});
      }
    }
    const double sum = factor.pi.sum();
    if (!(std::abs(sum - 1.0) <= kSumTol)) {
      out.push_back({"pi", fmt::format("pi sums to {}", sum)});
    }
  }
  if (factor.trans.rows() != factor.m || factor.trans.cols() != factor.m) {
    out.push_back({"trans", fmt::format("shape {}x{} != {}x{}", factor.trans.rows(),
                                        factor.trans.cols(), factor.m, factor.m)});
  } else if (factor.mode == Mode::Discrete) {
    check_stochastic(factor.trans, "trans", out);
  } else {
    check_generator(factor.trans, "trans", out);
  }
  return out;
}

std::vector<Violation> validate_law(const MigrationLaw& law, Mode mode) {
  std::vector<Violation> out;
  if (law.p < 1) {
    out.push_back({"p", fmt::format("rating count {} < 1", law.p)});
    return out;
  }
  for (int h = 0; h < law.states(); ++h) {
    const Matrix& mat = law.per_state[h];
    const std::string name = fmt::format("law[{}]", h + 1);
    if (mat.rows() != law.p || mat.cols() != law.p) {
      out.push_back({name, fmt::format("shape {}x{} != {}x{}", mat.rows(), mat.cols(),
                                       law.p, law.p)});
      continue;
    }
    if (mode == Mode::Discrete) {
      check_stochastic(mat, name, out);
    } else {
      check_generator(mat, name, out);
    }
  }
  return out;
}

std::vector<Violation> validate_model(const HiddenFactorSpec& factor,
                                      const MigrationLaw& law) {
  std::vector<Violation> out = validate_factor(factor);
  if (law.states() != factor.m) {
    out.push_back({"law", fmt::format("{} matrices for m = {} hidden states",
                                      law.states(), factor.m)});
  }
  auto law_out = validate_law(law, factor.mode);
  out.insert(out.end(), law_out.begin(), law_out.end());
  return out;
}

std::vector<Violation> validate_panel(const MigrationPanel& panel) {
  std::vector<Violation> out;
  if (panel.step_length_days < 1) {
    out.push_back({"step_length_days", "must be positive"});
  }
  if (panel.exposures.size() != panel.counts.size()) {
    out.push_back({"panel", fmt::format("{} exposure rows vs {} count rows",
                                        panel.exposures.size(), panel.counts.size())});
    return out;
  }
  for (int t = 0; t < panel.steps(); ++t) {
    const CountVector& y = panel.exposures[t];
    const CountMatrix& n = panel.counts[t];
    if (y.size() != panel.p || n.rows() != panel.p || n.cols() != panel.p) {
      out.push_back({fmt::format("step {}", t + 1), "dimension mismatch"});
      continue;
    }
    for (int j = 0; j < panel.p; ++j) {
      if (y(j) < 0) {
        out.push_back({fmt::format("step {} Y_{}", t + 1, j + 1), "negative exposure"});
      }
      for (int k = 0; k < panel.p; ++k) {
        if (n(j, k) < 0) {
          out.push_back({fmt::format("step {} N_{}_{}", t + 1, j + 1, k + 1),
                         "negative count"});
        }
      }
      const std::int64_t row = n.row(j).sum();
      if (row != y(j)) {
        out.push_back({fmt::format("step {} rating {}", t + 1, j + 1),
                       fmt::format("counts sum to {} but exposure is {}", row, y(j))});
      }
    }
  }
  return out;
}

std::vector<Violation> validate_events(const EventStream& stream) {
  std::vector<Violation> out;
  const int p = stream.p();
  CountVector y = stream.initial_exposures;
  if ((y.array() < 0).any()) out.push_back({"initial_exposures", "negative exposure"});
  std::size_t next_reset = 0;
  double last = -1.0;
  for (std::size_t e = 0; e < stream.events.size(); ++e) {
    const MigrationEvent& ev = stream.events[e];
    const std::string where = fmt::format("event {}", e + 1);
    while (next_reset < stream.resets.size() && stream.resets[next_reset].time <= ev.time) {
      y = stream.resets[next_reset++].exposures;
    }
    if (!(ev.time > last)) out.push_back({where, "times not strictly increasing"});
    if (ev.time < 0.0 || ev.time > stream.horizon) {
      out.push_back({where, fmt::format("time {} outside [0, {}]", ev.time, stream.horizon)});
    }
    last = ev.time;
    if (ev.from < 0 || ev.from >= p || ev.to < 0 || ev.to >= p || ev.from == ev.to) {
      out.push_back({where, fmt::format("invalid transition {}->{}", ev.from + 1, ev.to + 1)});
      continue;
    }
    if (ev.exposures.size() == p && ev.exposures != y) {
      out.push_back({where, "exposure snapshot inconsistent with cumulative transitions"});
    }
    if (y(ev.from) <= 0) {
      out.push_back({where, fmt::format("no exposure in rating {}", ev.from + 1)});
    }
    y(ev.from) -= 1;
    y(ev.to) += 1;
  }
  return out;
}

namespace {

[[noreturn]] void throw_violations(const std::vector<Violation>& v) {
  std::string msg = "invalid model:";
  for (std::size_t i = 0; i < v.size() && i < 5; ++i) {
    msg += " " + v[i].location + ": " + v[i].message + ";";
  }
  throw ModelError(msg);
}

}  // namespace

void require_valid(const HiddenFactorSpec& factor, const MigrationLaw& law) {
  auto v = validate_model(factor, law);
  if (!v.empty()) throw_violations(v);
}

void require_valid(const MigrationPanel& panel) {
  auto v = validate_panel(panel);
  if (v.empty()) return;
  std::string msg = "invalid panel:";
  for (std::size_t i = 0; i < v.size() && i < 5; ++i) {
    msg += " " + v[i].location + ": " + v[i].message + ";";
  }
  throw DataError(msg);
}

void renormalize(Vector& probs) {
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs(i) < 0.0) probs(i) = 0.0;
  }
  const double sum = probs.sum();
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    throw NumericalError("probability vector collapsed to zero mass");
  }
  if (std::abs(sum - 1.0) > kDriftTol) probs /= sum;
}

FilterState evolve_prior(const FilterState& state, const HiddenFactorSpec& factor,
                         double dt) {
  FilterState out{state.probs, state.time};
  if (factor.mode == Mode::Discrete) {
    out.probs = factor.trans.transpose() * state.probs;
    out.time = state.time + 1.0;
    renormalize(out.probs);
    return out;
  }
  if (!(dt > 0.0)) throw ModelError("evolve_prior: dt must be positive");
  const double rate = (-factor.trans.diagonal().array()).maxCoeff();
  const int substeps = std::max(1, static_cast<int>(std::ceil(dt * rate / 0.5)));
  const double h = dt / substeps;
  for (int s = 0; s < substeps; ++s) {
    out.probs += h * (factor.trans.transpose() * out.probs);
    renormalize(out.probs);
  }
  out.time = state.time + dt;
  return out;
}

FilterState evolve_prior_exact(const FilterState& state, const HiddenFactorSpec& factor,
                               double dt) {
  if (factor.mode != Mode::Continuous) {
    throw ModelError("evolve_prior_exact: continuous mode only");
  }
  if (!(dt > 0.0)) throw ModelError("evolve_prior_exact: dt must be positive");
  Matrix prop = (factor.trans.transpose() * dt).exp();
  FilterState out{prop * state.probs, state.time + dt};
  renormalize(out.probs);
  return out;
}

Matrix predict_transition_probs(const MigrationLaw& law, const FilterState& state) {
  if (state.probs.size() != law.states()) {
    throw ModelError(fmt::format("filter state has {} entries but the law has {} states",
                                 state.probs.size(), law.states()));
  }
  Matrix nu = Matrix::Zero(law.p, law.p);
  for (int h = 0; h < law.states(); ++h) {
    if (law.per_state[h].rows() != law.p || law.per_state[h].cols() != law.p) {
      throw ModelError("law matrix dimension mismatch");
    }
    nu += state.probs(h) * law.per_state[h];
  }
  return nu;
}

Matrix generator_to_probabilities(const Matrix& generator, double delta,
                                  Conversion conversion) {
  if (!(delta > 0.0)) throw ModelError("conversion step must be positive");
  if (conversion == Conversion::Exponential) {
    Matrix scaled = generator * delta;
    return scaled.exp();
  }
  return Matrix::Identity(generator.rows(), generator.cols()) + generator * delta;
}

Matrix probabilities_to_generator(const Matrix& probs, double delta) {
  if (!(delta > 0.0)) throw ModelError("conversion step must be positive");
  return (probs - Matrix::Identity(probs.rows(), probs.cols())) / delta;
}

MigrationLaw law_to_probabilities(const MigrationLaw& law, double delta,
                                  Conversion conversion) {
  MigrationLaw out{law.p, {}};
  out.per_state.reserve(law.per_state.size());
  for (const Matrix& g : law.per_state) {
    out.per_state.push_back(generator_to_probabilities(g, delta, conversion));
  }
  return out;
}

HiddenFactorSpec factor_to_probabilities(const HiddenFactorSpec& factor, double delta,
                                         Conversion conversion) {
  if (factor.mode != Mode::Continuous) return factor;
  HiddenFactorSpec out = factor;
  out.trans = generator_to_probabilities(factor.trans, delta, conversion);
  out.mode = Mode::Discrete;
  return out;
}

Vector risk_scores(const MigrationLaw& law) {
  Vector scores = Vector::Zero(law.states());
  if (law.p < 2) return scores;
  for (int h = 0; h < law.states(); ++h) {
    double total = 0.0;
    for (int j = 0; j + 1 < law.p; ++j) {
      total += law.per_state[h].row(j).tail(law.p - j - 1).sum();
    }
    scores(h) = total / (law.p - 1);
  }
  return scores;
}

void permute_states(HiddenFactorSpec& factor, MigrationLaw& law,
                    const std::vector<int>& perm) {
  const int m = factor.m;
  if (static_cast<int>(perm.size()) != m || law.states() != m) {
    throw ModelError("permutation size mismatch");
  }
  Vector pi(m);
  Matrix trans(m, m);
  std::vector<Matrix> per_state(m);
  for (int s = 0; s < m; ++s) {
    pi(s) = factor.pi(perm[s]);
    per_state[s] = law.per_state[perm[s]];
    for (int r = 0; r < m; ++r) trans(s, r) = factor.trans(perm[s], perm[r]);
  }
  factor.pi = std::move(pi);
  factor.trans = std::move(trans);
  law.per_state = std::move(per_state);
}

std::vector<int> risk_order(const MigrationLaw& law) {
  const Vector scores = risk_scores(law);
  std::vector<int> perm(law.states());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(),
                   [&](int a, int b) { return scores(a) < scores(b); });
  return perm;
}

void sort_states_by_risk(HiddenFactorSpec& factor, MigrationLaw& law) {
  permute_states(factor, law, risk_order(law));
}

}  // namespace ratingfilter
