// Pipeline front end: simulate, build-panel, calibrate, filter, forecast,
// evaluate, backtest.
//
// Exit codes: 0 ok, 1 data error, 2 model/configuration error, 3 numerical
// failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "ratingfilter/calibrate.hpp"
#include "ratingfilter/evaluation.hpp"
#include "ratingfilter/filter_continuous.hpp"
#include "ratingfilter/filter_discrete.hpp"
#include "ratingfilter/io.hpp"
#include "ratingfilter/ratings.hpp"
#include "ratingfilter/simulate.hpp"

namespace rf = ratingfilter;

namespace {

struct Common {
  std::string mode;
  int states = 2;
  int step_days = 1;
  int restarts = 10;
  std::uint64_t seed = 0;
  double tol = 1e-8;
  int subintervals = 0;
  double floor = 1e-12;
  int max_iters = 500;
  int threads = 0;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw rf::DataError("cannot open " + path);
  return in;
}

rf::MigrationPanel load_panel(const std::string& path, int step_days) {
  auto in = open_input(path);
  return rf::read_panel_csv(in, step_days);
}

rf::EventStream load_events(const std::string& path) {
  auto in = open_input(path);
  return rf::read_events_csv(in);
}

void write_json(const std::string& path, const rf::Json& doc) {
  rf::write_text_file(path, doc.dump(2) + "\n");
}

void check_mode(const Common& c, rf::Mode model_mode) {
  if (!c.mode.empty() && rf::parse_mode(c.mode) != model_mode) {
    throw rf::ModelError(fmt::format("--mode {} does not match the model ({})", c.mode,
                                     rf::to_string(model_mode)));
  }
}

rf::Mode requested_mode(const Common& c) {
  return c.mode.empty() ? rf::Mode::Discrete : rf::parse_mode(c.mode);
}

rf::EmConfig em_config(const Common& c) {
  rf::EmConfig cfg;
  cfg.restarts = c.restarts;
  cfg.max_iters = c.max_iters;
  cfg.tol = c.tol;
  cfg.seed = c.seed;
  cfg.floor = c.floor;
  cfg.threads = c.threads;
  return cfg;
}

// Continuous input: an event file, or a panel spread onto subintervals.
rf::EventStream continuous_input(const Common& c, const std::string& panel_path,
                                 const std::string& events_path) {
  if (!events_path.empty()) return load_events(events_path);
  if (panel_path.empty()) throw rf::DataError("either --panel or --events is required");
  if (c.subintervals <= 0) throw rf::ModelError("--subintervals is required to spread a panel");
  return rf::spread_jumps(load_panel(panel_path, c.step_days), {c.subintervals, c.seed});
}

void add_common(CLI::App* cmd, Common& c, bool em_flags) {
  cmd->add_option("--mode", c.mode, "discrete or continuous")
      ->check(CLI::IsMember({"discrete", "continuous"}));
  cmd->add_option("--step-days", c.step_days, "days per panel step")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--subintervals", c.subintervals, "spreading slots per panel step");
  if (em_flags) {
    cmd->add_option("--states", c.states, "number of hidden states")->check(CLI::PositiveNumber);
    cmd->add_option("--restarts", c.restarts, "EM restarts")->check(CLI::PositiveNumber);
    cmd->add_option("--tol", c.tol, "relative log-likelihood tolerance");
    cmd->add_option("--floor", c.floor, "probability floor");
    cmd->add_option("--max-iters", c.max_iters, "EM iterations per restart");
    cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
  }
}

std::vector<std::int64_t> parse_entities(const std::string& text, int p) {
  const auto items = split_list(text);
  std::vector<std::int64_t> out;
  for (const auto& item : items) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw rf::ModelError("--entities: not an integer: " + item);
    }
  }
  if (out.size() == 1) out.assign(static_cast<std::size_t>(p), out.front());
  return out;
}

std::vector<rf::Matrix> trajectory_forecasts(const std::string& path) {
  auto in = open_input(path);
  return rf::read_trajectory_csv(in).forecasts;
}

rf::RatingHistories load_ratings(const std::string& path, const std::string& alphabet,
                                 const std::string& censor) {
  auto in = open_input(path);
  rf::RatingHistories h = rf::ingest_ratings(in, {split_list(alphabet), censor});
  if (h.duplicate_count > 0) {
    std::cerr << fmt::format("warning: {} duplicate same-date rows resolved (last wins)\n",
                             h.duplicate_count);
  }
  return h;
}

int run(int argc, char** argv) {
  CLI::App app{"Hidden-factor filtering and calibration for rating migration panels"};
  app.require_subcommand(1);
  Common c;

  // simulate ---------------------------------------------------------------
  std::string sim_model, sim_entities = "100", sim_out, sim_path, sim_panel_out;
  int sim_steps = 0;
  double sim_horizon = 0.0;
  auto* sim = app.add_subcommand("simulate", "simulate a panel (discrete) or events (continuous)");
  add_common(sim, c, false);
  sim->add_option("--model", sim_model, "model JSON")->required();
  sim->add_option("--entities", sim_entities, "entities per rating: n or n_1,...,n_p");
  sim->add_option("--steps", sim_steps, "discrete horizon");
  sim->add_option("--horizon", sim_horizon, "continuous horizon");
  sim->add_option("--out", sim_out, "panel CSV (discrete) or event CSV (continuous)")->required();
  sim->add_option("--path", sim_path, "hidden path CSV");
  sim->add_option("--panel-out", sim_panel_out, "continuous only: panel aggregated by --step-days");

  // build-panel ------------------------------------------------------------
  std::string bp_ratings, bp_alphabet, bp_censor = "W", bp_origin, bp_out;
  int bp_steps = 0;
  auto* bp = app.add_subcommand("build-panel", "aggregate rating histories into a panel");
  add_common(bp, c, false);
  bp->add_option("--ratings", bp_ratings, "CSV entity_id,date,rating")->required();
  bp->add_option("--alphabet", bp_alphabet, "ordered labels, e.g. A,Baa,Ba,B,C")->required();
  bp->add_option("--censor", bp_censor, "not-rated label");
  bp->add_option("--origin", bp_origin, "first interval start (YYYY-MM-DD)")->required();
  bp->add_option("--steps", bp_steps, "number of intervals (default: cover all data)");
  bp->add_option("--out", bp_out, "panel CSV")->required();

  // calibrate --------------------------------------------------------------
  std::string cal_panel, cal_events, cal_init, cal_out, cal_convention = "picked";
  double cal_interval = 0.0;
  auto* cal = app.add_subcommand("calibrate", "fit a model by multi-start EM");
  add_common(cal, c, true);
  cal->add_option("--panel", cal_panel, "panel CSV");
  cal->add_option("--events", cal_events, "event CSV (continuous)");
  cal->add_option("--interval", cal_interval, "fine-grid interval for --events");
  cal->add_option("--init", cal_init, "model JSON used as the first restart");
  cal->add_option("--convention", cal_convention, "picked or all (stayer factors)")
      ->check(CLI::IsMember({"picked", "all"}));
  cal->add_option("--out", cal_out, "result JSON")->required();

  // filter -----------------------------------------------------------------
  std::string fil_model, fil_panel, fil_events, fil_out;
  double fil_grid_dt = 1e-2, fil_report_dt = 0.0, fil_horizon = 0.0;
  auto* fil = app.add_subcommand("filter", "run the filter and write the trajectory");
  add_common(fil, c, false);
  fil->add_option("--model", fil_model, "model JSON")->required();
  fil->add_option("--panel", fil_panel, "panel CSV");
  fil->add_option("--events", fil_events, "event CSV (continuous)");
  fil->add_option("--grid-dt", fil_grid_dt, "continuous integration step");
  fil->add_option("--report-dt", fil_report_dt, "continuous reporting step (default --step-days)");
  fil->add_option("--forecast-horizon", fil_horizon, "continuous forecast horizon");
  fil->add_option("--out", fil_out, "trajectory CSV")->required();

  // forecast ---------------------------------------------------------------
  std::string fc_model, fc_traj, fc_out;
  int fc_ahead = 1;
  double fc_horizon = 0.0;
  auto* fc = app.add_subcommand("forecast", "transition forecasts from filtered states");
  add_common(fc, c, false);
  fc->add_option("--model", fc_model, "model JSON")->required();
  fc->add_option("--trajectory", fc_traj, "trajectory CSV")->required();
  fc->add_option("--ahead", fc_ahead, "steps ahead (1 = next step)")->check(CLI::PositiveNumber);
  fc->add_option("--horizon", fc_horizon, "continuous step length (default --step-days)");
  fc->add_option("--out", fc_out, "forecast CSV")->required();

  // evaluate ---------------------------------------------------------------
  std::string ev_traj, ev_panel, ev_out;
  int ev_first = 1, ev_last = 0;
  auto* ev = app.add_subcommand("evaluate", "R2 of forecasts against realized ratios");
  add_common(ev, c, false);
  ev->add_option("--trajectory", ev_traj, "trajectory or forecast CSV")->required();
  ev->add_option("--panel", ev_panel, "panel CSV")->required();
  ev->add_option("--first", ev_first, "first step (1-based)")->check(CLI::PositiveNumber);
  ev->add_option("--last", ev_last, "last step (inclusive, default: panel end)");
  ev->add_option("--out", ev_out, "report JSON")->required();

  // backtest ---------------------------------------------------------------
  std::string bt_ratings, bt_panel, bt_alphabet, bt_censor = "W", bt_origin, bt_out;
  int bt_steps = 0, bt_fold = 12, bt_first_cut = 0;
  auto* bt = app.add_subcommand("backtest", "rolling recalibration and out-of-sample R2");
  add_common(bt, c, true);
  bt->add_option("--ratings", bt_ratings, "CSV entity_id,date,rating");
  bt->add_option("--panel", bt_panel, "panel CSV (instead of --ratings)");
  bt->add_option("--alphabet", bt_alphabet, "ordered labels");
  bt->add_option("--censor", bt_censor, "not-rated label");
  bt->add_option("--origin", bt_origin, "first interval start (YYYY-MM-DD)");
  bt->add_option("--steps", bt_steps, "number of intervals");
  bt->add_option("--steps-per-fold", bt_fold, "steps between recalibrations")
      ->check(CLI::PositiveNumber);
  bt->add_option("--first-cut", bt_first_cut, "steps in the first calibration window")
      ->required();
  bt->add_option("--out", bt_out, "report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (sim->parsed()) {
    const rf::ModelInit model = rf::read_model_file(sim_model);
    check_mode(c, model.factor.mode);
    rf::SimulationConfig cfg;
    cfg.entities_per_rating = parse_entities(sim_entities, model.law.p);
    cfg.steps = sim_steps;
    cfg.horizon = sim_horizon;
    cfg.seed = c.seed;
    cfg.mode = model.factor.mode;
    cfg.step_length_days = c.step_days;
    std::ostringstream out;
    rf::HiddenPath path;
    if (model.factor.mode == rf::Mode::Discrete) {
      const auto sim_result = rf::simulate_panel_discrete(model.factor, model.law, cfg);
      rf::write_panel_csv(out, sim_result.panel);
      path = sim_result.path;
    } else {
      const auto sim_result = rf::simulate_events_continuous(model.factor, model.law, cfg);
      rf::write_events_csv(out, sim_result.events);
      path = sim_result.path;
      if (!sim_panel_out.empty()) {
        const int steps = static_cast<int>(sim_horizon / c.step_days);
        std::ostringstream panel_out;
        rf::write_panel_csv(panel_out, rf::aggregate_events(sim_result.events, c.step_days,
                                                            steps, c.step_days));
        rf::write_text_file(sim_panel_out, panel_out.str());
      }
    }
    rf::write_text_file(sim_out, out.str());
    if (!sim_path.empty()) {
      std::ostringstream path_out;
      rf::write_path_csv(path_out, path);
      rf::write_text_file(sim_path, path_out.str());
    }
  } else if (bp->parsed()) {
    const auto histories = load_ratings(bp_ratings, bp_alphabet, bp_censor);
    const auto panel = rf::build_panel(histories, c.step_days, rf::parse_iso_date(bp_origin),
                                       bp_steps);
    std::ostringstream out;
    rf::write_panel_csv(out, panel);
    rf::write_text_file(bp_out, out.str());
  } else if (cal->parsed()) {
    rf::EmConfig cfg = em_config(c);
    if (!cal_init.empty()) cfg.start = rf::read_model_file(cal_init);
    if (requested_mode(c) == rf::Mode::Discrete) {
      if (cal_panel.empty()) throw rf::DataError("--panel is required in discrete mode");
      const auto result = rf::em_fit(load_panel(cal_panel, c.step_days), c.states, cfg);
      write_json(cal_out, rf::calibration_to_json(result));
    } else {
      cfg.mode = rf::EmMode::ContinuousAdapted;
      double interval = cal_interval;
      if (cal_events.empty()) {
        if (c.subintervals <= 0) throw rf::ModelError("--subintervals is required");
        interval = static_cast<double>(c.step_days) / c.subintervals;
      } else if (!(interval > 0.0)) {
        throw rf::ModelError("--interval is required with --events");
      }
      const rf::EventStream events = continuous_input(c, cal_panel, cal_events);
      rf::ContinuousEmOptions opts;
      opts.convention = cal_convention == "all" ? rf::StayerConvention::AllStayers
                                                : rf::StayerConvention::PickedOnly;
      opts.optimizer.floor = c.floor;
      const rf::FineGrid grid = rf::to_fine_grid(events, interval);
      if (cfg.start) cfg.start = rf::picker_start(*cfg.start, interval, rf::max_population(grid));
      const auto result = rf::em_fit_continuous(grid, c.states, cfg, opts);
      write_json(cal_out, rf::continuous_calibration_to_json(result));
    }
  } else if (fil->parsed()) {
    const rf::ModelInit model = rf::read_model_file(fil_model);
    check_mode(c, model.factor.mode);
    std::ostringstream out;
    if (model.factor.mode == rf::Mode::Discrete) {
      if (fil_panel.empty()) throw rf::DataError("--panel is required in discrete mode");
      const auto traj = rf::run_filter(load_panel(fil_panel, c.step_days), model.factor,
                                       model.law);
      std::vector<double> times;
      for (std::size_t t = 0; t < traj.states.size(); ++t) times.push_back(static_cast<double>(t));
      rf::write_trajectory_csv(out, times, traj.states, traj.forecasts);
      std::cerr << fmt::format("loglik {}\n", rf::format_real(traj.loglik));
    } else {
      const rf::EventStream events = continuous_input(c, fil_panel, fil_events);
      rf::ContinuousFilterOptions opts;
      opts.grid_dt = fil_grid_dt;
      opts.report_dt = fil_report_dt > 0.0 ? fil_report_dt : c.step_days;
      opts.forecast_horizon = fil_horizon;
      const auto traj = rf::run_continuous_filter(events, model.factor, model.law,
                                                  rf::FilterState{model.factor.pi, 0.0}, opts);
      rf::write_trajectory_csv(out, traj.report_times, traj.trajectory.states,
                               traj.trajectory.forecasts);
      std::cerr << fmt::format("loglik {}\n", rf::format_real(traj.loglik));
    }
    rf::write_text_file(fil_out, out.str());
  } else if (fc->parsed()) {
    const rf::ModelInit model = rf::read_model_file(fc_model);
    check_mode(c, model.factor.mode);
    auto in = open_input(fc_traj);
    const rf::TrajectoryTable table = rf::read_trajectory_csv(in);
    if (table.m != model.factor.m) throw rf::ModelError("trajectory / model state count mismatch");
    const double horizon = fc_horizon > 0.0 ? fc_horizon : c.step_days;
    std::vector<rf::Matrix> forecasts;
    for (std::size_t t = 0; t < table.probs.size(); ++t) {
      rf::FilterState state{table.probs[t], table.times[t]};
      rf::renormalize(state.probs);
      if (model.factor.mode == rf::Mode::Discrete) {
        for (int a = 1; a < fc_ahead; ++a) state = rf::evolve_prior(state, model.factor);
        forecasts.push_back(rf::predict_transition_probs(model.law, state));
      } else {
        if (fc_ahead > 1) state = rf::evolve_prior_exact(state, model.factor, horizon * (fc_ahead - 1));
        forecasts.push_back(rf::predict_transition_probs(
            rf::law_to_probabilities(model.law, horizon), state));
      }
    }
    std::ostringstream out;
    rf::write_forecast_csv(out, table.times, forecasts);
    rf::write_text_file(fc_out, out.str());
  } else if (ev->parsed()) {
    const auto panel = load_panel(ev_panel, c.step_days);
    const auto forecasts = trajectory_forecasts(ev_traj);
    const int last = ev_last > 0 ? ev_last : panel.steps();
    const auto report = rf::evaluate(forecasts, panel, ev_first - 1, last);
    const auto baseline = rf::evaluate(rf::constant_baseline(panel, 0, panel.steps()), panel,
                                       ev_first - 1, last);
    rf::Json doc;
    doc["model"] = rf::evaluation_to_json(report);
    doc["constant"] = rf::evaluation_to_json(baseline);
    write_json(ev_out, doc);
  } else if (bt->parsed()) {
    rf::MigrationPanel panel;
    if (!bt_panel.empty()) {
      panel = load_panel(bt_panel, c.step_days);
    } else {
      if (bt_ratings.empty() || bt_alphabet.empty() || bt_origin.empty()) {
        throw rf::DataError("--ratings needs --alphabet and --origin");
      }
      panel = rf::build_panel(load_ratings(bt_ratings, bt_alphabet, bt_censor), c.step_days,
                              rf::parse_iso_date(bt_origin), bt_steps);
    }
    rf::BacktestConfig cfg;
    cfg.m = c.states;
    cfg.steps_per_fold = bt_fold;
    cfg.first_cut = bt_first_cut;
    cfg.em = em_config(c);
    write_json(bt_out, rf::backtest_to_json(rf::run_backtest(panel, cfg)));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rf::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 1;
  } catch (const rf::ModelError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return 2;
  } catch (const rf::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
