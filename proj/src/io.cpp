#include "ratingfilter/io.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

namespace ratingfilter {

namespace {

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    out.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::int64_t parse_int(const std::string& text, int line) {
  std::int64_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError(fmt::format("line {}: expected an integer, got '{}'", line, text));
  }
  return value;
}

double parse_real(const std::string& text, int line) {
  char* end = nullptr;
  const double value = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw DataError(fmt::format("line {}: expected a number, got '{}'", line, text));
  }
  return value;
}

bool next_line(std::istream& in, std::string& line, int& number) {
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) return true;
  }
  return false;
}

Json matrix_to_json(const Matrix& mat) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < mat.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < mat.cols(); ++c) row.push_back(mat(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& doc, int rows, int cols, const std::string& name) {
  if (!doc.is_array() || static_cast<int>(doc.size()) != rows) {
    throw ModelError(fmt::format("'{}' must be a {}x{} array", name, rows, cols));
  }
  Matrix mat(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const Json& row = doc[r];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw ModelError(fmt::format("'{}' row {} must have {} entries", name, r + 1, cols));
    }
    for (int c = 0; c < cols; ++c) mat(r, c) = row[c].get<double>();
  }
  return mat;
}

}  // namespace

std::string format_real(double value) { return fmt::format("{:.17g}", value); }

void write_panel_csv(std::ostream& out, const MigrationPanel& panel) {
  const int p = panel.p;
  std::string header = "t";
  for (int j = 1; j <= p; ++j) header += fmt::format(",Y_{}", j);
  for (int j = 1; j <= p; ++j) {
    for (int k = 1; k <= p; ++k) header += fmt::format(",N_{}_{}", j, k);
  }
  out << header << '\n';
  for (int t = 0; t < panel.steps(); ++t) {
    std::string row = fmt::format("{}", t + 1);
    for (int j = 0; j < p; ++j) row += fmt::format(",{}", panel.exposures[t](j));
    for (int j = 0; j < p; ++j) {
      for (int k = 0; k < p; ++k) row += fmt::format(",{}", panel.counts[t](j, k));
    }
    out << row << '\n';
  }
}

MigrationPanel read_panel_csv(std::istream& in, int step_length_days) {
  std::string line;
  int number = 0;
  if (!next_line(in, line, number)) throw DataError("panel CSV is empty");
  const auto header = split(line);
  // 1 + p + p^2 columns.
  int p = 0;
  while (1 + p + p * p < static_cast<int>(header.size())) ++p;
  if (p < 1 || 1 + p + p * p != static_cast<int>(header.size()) || header[0] != "t") {
    throw DataError(fmt::format("line {}: header is not t,Y_1..Y_p,N_1_1..N_p_p", number));
  }
  for (int j = 0; j < p; ++j) {
    if (header[1 + j] != fmt::format("Y_{}", j + 1)) {
      throw DataError(fmt::format("line {}: unexpected column '{}'", number, header[1 + j]));
    }
  }
  MigrationPanel panel;
  panel.p = p;
  panel.step_length_days = step_length_days;
  while (next_line(in, line, number)) {
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw DataError(fmt::format("line {}: expected {} fields, found {}", number,
                                  header.size(), cells.size()));
    }
    const auto t = parse_int(cells[0], number);
    if (t != panel.steps() + 1) {
      throw DataError(fmt::format("line {}: step {} out of order", number, t));
    }
    CountVector y(p);
    CountMatrix n(p, p);
    for (int j = 0; j < p; ++j) y(j) = parse_int(cells[1 + j], number);
    for (int j = 0; j < p; ++j) {
      for (int k = 0; k < p; ++k) n(j, k) = parse_int(cells[1 + p + j * p + k], number);
    }
    panel.exposures.push_back(y);
    panel.counts.push_back(n);
  }
  require_valid(panel);
  return panel;
}

void write_events_csv(std::ostream& out, const EventStream& events) {
  std::string exposures = "# exposures";
  for (Eigen::Index j = 0; j < events.initial_exposures.size(); ++j) {
    exposures += fmt::format(",{}", events.initial_exposures(j));
  }
  out << exposures << '\n';
  out << "# horizon," << format_real(events.horizon) << '\n';
  for (const ExposureReset& r : events.resets) {
    std::string line = "# reset," + format_real(r.time);
    for (Eigen::Index j = 0; j < r.exposures.size(); ++j) line += fmt::format(",{}", r.exposures(j));
    out << line << '\n';
  }
  out << "time,from_rating,to_rating\n";
  for (const MigrationEvent& ev : events.events) {
    out << format_real(ev.time) << ',' << ev.from + 1 << ',' << ev.to + 1 << '\n';
  }
}

EventStream read_events_csv(std::istream& in) {
  EventStream stream;
  std::string line;
  int number = 0;
  bool have_exposures = false;
  bool have_horizon = false;
  bool in_body = false;
  while (next_line(in, line, number)) {
    if (!in_body && line.rfind('#', 0) == 0) {
      auto cells = split(line.substr(1));
      if (cells.empty()) continue;
      if (cells[0] == "exposures") {
        stream.initial_exposures.resize(static_cast<Eigen::Index>(cells.size()) - 1);
        for (std::size_t j = 1; j < cells.size(); ++j) {
          stream.initial_exposures(j - 1) = parse_int(cells[j], number);
        }
        have_exposures = true;
      } else if (cells[0] == "horizon" && cells.size() == 2) {
        stream.horizon = parse_real(cells[1], number);
        have_horizon = true;
      } else if (cells[0] == "reset" && cells.size() >= 2) {
        ExposureReset r;
        r.time = parse_real(cells[1], number);
        r.exposures.resize(static_cast<Eigen::Index>(cells.size()) - 2);
        for (std::size_t j = 2; j < cells.size(); ++j) r.exposures(j - 2) = parse_int(cells[j], number);
        stream.resets.push_back(std::move(r));
      }
      continue;
    }
    if (!in_body) {
      if (line != "time,from_rating,to_rating") {
        throw DataError(fmt::format("line {}: expected header time,from_rating,to_rating", number));
      }
      in_body = true;
      continue;
    }
    const auto cells = split(line);
    if (cells.size() != 3) throw DataError(fmt::format("line {}: expected 3 fields", number));
    MigrationEvent ev;
    ev.time = parse_real(cells[0], number);
    ev.from = static_cast<int>(parse_int(cells[1], number)) - 1;
    ev.to = static_cast<int>(parse_int(cells[2], number)) - 1;
    stream.events.push_back(ev);
  }
  if (!have_exposures || !have_horizon || !in_body) {
    throw DataError("event CSV needs '# exposures', '# horizon' and a header row");
  }
  const int p = stream.p();
  for (const auto& r : stream.resets) {
    if (r.exposures.size() != p) throw DataError("reset exposure vector has the wrong length");
  }
  // Rebuild the exposure snapshots from the cumulative migrations.
  CountVector y = stream.initial_exposures;
  std::size_t next_reset = 0;
  for (MigrationEvent& ev : stream.events) {
    while (next_reset < stream.resets.size() && stream.resets[next_reset].time <= ev.time) {
      y = stream.resets[next_reset++].exposures;
    }
    if (ev.from < 0 || ev.from >= p || ev.to < 0 || ev.to >= p) {
      throw DataError(fmt::format("event at {}: rating outside 1..{}", ev.time, p));
    }
    ev.exposures = y;
    y(ev.from) -= 1;
    y(ev.to) += 1;
  }
  auto violations = validate_events(stream);
  if (!violations.empty()) {
    throw DataError(violations.front().location + ": " + violations.front().message);
  }
  return stream;
}

void write_path_csv(std::ostream& out, const HiddenPath& path) {
  out << "time,state\n";
  for (std::size_t i = 0; i < path.states.size(); ++i) {
    out << format_real(path.times[i]) << ',' << path.states[i] + 1 << '\n';
  }
}

void write_trajectory_csv(std::ostream& out, const std::vector<double>& times,
                          const std::vector<FilterState>& states,
                          const std::vector<Matrix>& forecasts) {
  if (states.empty()) return;
  const Eigen::Index m = states.front().probs.size();
  const Eigen::Index p = forecasts.empty() ? 0 : forecasts.front().rows();
  std::string header = "t";
  for (Eigen::Index h = 1; h <= m; ++h) header += fmt::format(",I_{}", h);
  for (Eigen::Index j = 1; j <= p; ++j) {
    for (Eigen::Index k = 1; k <= p; ++k) header += fmt::format(",nu_{}_{}", j, k);
  }
  out << header << '\n';
  for (std::size_t t = 0; t < states.size(); ++t) {
    std::string row = format_real(t < times.size() ? times[t] : states[t].time);
    for (Eigen::Index h = 0; h < m; ++h) row += "," + format_real(states[t].probs(h));
    if (t < forecasts.size()) {
      for (Eigen::Index j = 0; j < p; ++j) {
        for (Eigen::Index k = 0; k < p; ++k) row += "," + format_real(forecasts[t](j, k));
      }
    }
    out << row << '\n';
  }
}

TrajectoryTable read_trajectory_csv(std::istream& in) {
  std::string line;
  int number = 0;
  if (!next_line(in, line, number)) throw DataError("trajectory CSV is empty");
  const auto header = split(line);
  TrajectoryTable table;
  for (const auto& col : header) {
    if (col.rfind("I_", 0) == 0) ++table.m;
  }
  const int rest = static_cast<int>(header.size()) - 1 - table.m;
  while (table.p * table.p < rest) ++table.p;
  if (header.empty() || header[0] != "t" || table.m < 1 || table.p * table.p != rest) {
    throw DataError("trajectory header is not t,I_1..I_m,nu_1_1..nu_p_p");
  }
  while (next_line(in, line, number)) {
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw DataError(fmt::format("line {}: expected {} fields", number, header.size()));
    }
    table.times.push_back(parse_real(cells[0], number));
    Vector probs(table.m);
    for (int h = 0; h < table.m; ++h) probs(h) = parse_real(cells[1 + h], number);
    Matrix nu(table.p, table.p);
    for (int j = 0; j < table.p; ++j) {
      for (int k = 0; k < table.p; ++k) {
        nu(j, k) = parse_real(cells[1 + table.m + j * table.p + k], number);
      }
    }
    table.probs.push_back(std::move(probs));
    table.forecasts.push_back(std::move(nu));
  }
  return table;
}

void write_forecast_csv(std::ostream& out, const std::vector<double>& times,
                        const std::vector<Matrix>& forecasts) {
  const Eigen::Index p = forecasts.empty() ? 0 : forecasts.front().rows();
  std::string header = "t";
  for (Eigen::Index j = 1; j <= p; ++j) {
    for (Eigen::Index k = 1; k <= p; ++k) header += fmt::format(",nu_{}_{}", j, k);
  }
  out << header << '\n';
  for (std::size_t t = 0; t < forecasts.size(); ++t) {
    std::string row = format_real(times[t]);
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index k = 0; k < p; ++k) row += "," + format_real(forecasts[t](j, k));
    }
    out << row << '\n';
  }
}

Json model_to_json(const HiddenFactorSpec& factor, const MigrationLaw& law) {
  Json doc;
  doc["mode"] = to_string(factor.mode);
  doc["m"] = factor.m;
  doc["p"] = law.p;
  Json pi = Json::array();
  for (Eigen::Index i = 0; i < factor.pi.size(); ++i) pi.push_back(factor.pi(i));
  doc["pi"] = std::move(pi);
  doc["trans"] = matrix_to_json(factor.trans);
  Json per_state = Json::array();
  for (const Matrix& l : law.per_state) per_state.push_back(matrix_to_json(l));
  doc["law"] = std::move(per_state);
  return doc;
}

ModelInit model_from_json(const Json& doc) {
  try {
    ModelInit out;
    out.factor.mode = parse_mode(doc.at("mode").get<std::string>());
    out.factor.m = doc.at("m").get<int>();
    out.law.p = doc.at("p").get<int>();
    const int m = out.factor.m;
    const int p = out.law.p;
    if (m < 1 || p < 1) throw ModelError("m and p must be positive");
    const Json& pi = doc.at("pi");
    if (!pi.is_array() || static_cast<int>(pi.size()) != m) {
      throw ModelError("'pi' must have m entries");
    }
    out.factor.pi.resize(m);
    for (int i = 0; i < m; ++i) out.factor.pi(i) = pi[i].get<double>();
    out.factor.trans = matrix_from_json(doc.at("trans"), m, m, "trans");
    const Json& law = doc.at("law");
    if (!law.is_array() || static_cast<int>(law.size()) != m) {
      throw ModelError("'law' must hold m matrices");
    }
    for (int h = 0; h < m; ++h) {
      out.law.per_state.push_back(matrix_from_json(law[h], p, p, fmt::format("law[{}]", h + 1)));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("model JSON: ") + e.what());
  }
}

namespace {

Json restarts_to_json(const CalibrationResult& result) {
  Json restarts = Json::array();
  for (const RestartSummary& r : result.restarts) {
    Json item;
    item["seed"] = r.seed;
    item["iterations"] = r.iterations;
    item["converged"] = r.converged;
    item["failed"] = r.failed;
    if (r.failed) {
      item["error"] = r.error;
    } else {
      item["final_loglik"] = r.final_loglik;
    }
    restarts.push_back(std::move(item));
  }
  return restarts;
}

}  // namespace

Json calibration_to_json(const CalibrationResult& result) {
  Json doc = model_to_json(result.factor, result.law);
  Json diag;
  diag["best_restart"] = result.best_restart;
  diag["converged"] = result.converged;
  diag["loglik_trace"] = result.loglik_trace;
  diag["restarts"] = restarts_to_json(result);
  doc["diagnostics"] = std::move(diag);
  return doc;
}

Json continuous_calibration_to_json(const ContinuousCalibration& result) {
  Json doc = model_to_json(result.generator, result.intensities);
  Json diag;
  diag["best_restart"] = result.fine.best_restart;
  diag["converged"] = result.fine.converged;
  diag["loglik_trace"] = result.fine.loglik_trace;
  diag["restarts"] = restarts_to_json(result.fine);
  diag["interval_length"] = result.interval_length;
  diag["n_bar"] = result.n_bar;
  diag["fine_grid_model"] = model_to_json(result.fine.factor, result.fine.law);
  doc["diagnostics"] = std::move(diag);
  return doc;
}

Json evaluation_to_json(const EvaluationReport& report) {
  Json doc;
  doc["p"] = report.p;
  doc["first_step"] = report.first_step + 1;
  doc["last_step"] = report.last_step;
  Json items = Json::array();
  for (const TransitionSeries& s : report.transitions) {
    Json item;
    item["from"] = s.from + 1;
    item["to"] = s.to + 1;
    if (s.r2) {
      item["r2"] = *s.r2;
    } else {
      item["r2"] = nullptr;
    }
    Json steps = Json::array();
    for (int t : s.steps) steps.push_back(t + 1);
    item["steps"] = std::move(steps);
    item["realized"] = s.realized;
    item["predicted"] = s.predicted;
    items.push_back(std::move(item));
  }
  doc["transitions"] = std::move(items);
  return doc;
}

Json backtest_to_json(const BacktestResult& result) {
  Json doc;
  Json folds = Json::array();
  for (const BacktestFold& f : result.folds) {
    Json item;
    item["calibration_steps"] = f.cut;
    item["forecast_steps"] = Json::array({f.cut + 1, f.end});
    item["calibration_loglik"] = f.calibration_loglik;
    item["converged"] = f.converged;
    folds.push_back(std::move(item));
  }
  doc["folds"] = std::move(folds);
  doc["filter"] = evaluation_to_json(result.filter_report);
  doc["constant"] = evaluation_to_json(result.constant_report);
  return doc;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << contents;
}

ModelInit read_model_file(const std::string& path) {
  const std::string text = read_text_file(path);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(path + ": " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace ratingfilter
