// File formats: panel / event / trajectory / hidden-path CSV and model JSON.
//
// Ratings and hidden states are written 1-based. Reals are written with 17
// significant digits so files round-trip exactly and are byte-stable.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ratingfilter/calibrate.hpp"
#include "ratingfilter/evaluation.hpp"
#include "ratingfilter/filter_discrete.hpp"
#include "ratingfilter/model.hpp"
#include "ratingfilter/simulate.hpp"

#include "json.hpp"

namespace ratingfilter {

std::string format_real(double value);

// Header: t,Y_1..Y_p,N_1_1..N_p_p (counts row-major). t runs 1..steps.
void write_panel_csv(std::ostream& out, const MigrationPanel& panel);
MigrationPanel read_panel_csv(std::istream& in, int step_length_days);

// "# exposures,y_1,...,y_p" and "# horizon,T" comment lines, then the header
// time,from_rating,to_rating. Exposure resets are "# reset,time,y_1,...".
void write_events_csv(std::ostream& out, const EventStream& events);
EventStream read_events_csv(std::istream& in);

// Header: time,state.
void write_path_csv(std::ostream& out, const HiddenPath& path);

// Header: t,I_1..I_m,nu_1_1..nu_p_p. One row per filtered state.
void write_trajectory_csv(std::ostream& out, const std::vector<double>& times,
                          const std::vector<FilterState>& states,
                          const std::vector<Matrix>& forecasts);

struct TrajectoryTable {
  std::vector<double> times;
  std::vector<Vector> probs;
  std::vector<Matrix> forecasts;
  int m = 0;
  int p = 0;
};
TrajectoryTable read_trajectory_csv(std::istream& in);

// Header: t,nu_1_1..nu_p_p.
void write_forecast_csv(std::ostream& out, const std::vector<double>& times,
                        const std::vector<Matrix>& forecasts);

using Json = nlohmann::ordered_json;

// {"mode","m","p","pi","trans","law"}.
Json model_to_json(const HiddenFactorSpec& factor, const MigrationLaw& law);
ModelInit model_from_json(const Json& doc);

// Model document plus a "diagnostics" block.
Json calibration_to_json(const CalibrationResult& result);
Json continuous_calibration_to_json(const ContinuousCalibration& result);

// Per-transition R2 plus the realized and predicted series.
Json evaluation_to_json(const EvaluationReport& report);
Json backtest_to_json(const BacktestResult& result);

ModelInit read_model_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

}  // namespace ratingfilter
