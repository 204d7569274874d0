#include "ratingfilter/ratings.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

namespace ratingfilter {

int RatingAlphabet::index(const std::string& label) const {
  if (label == censor_label) return kCensored;
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw DataError(fmt::format("unknown rating label '{}'", label));
  return static_cast<int>(it - labels.begin());
}

int parse_iso_date(const std::string& text) {
  int y = 0;
  unsigned mo = 0, d = 0;
  const auto bad = [&] { return DataError(fmt::format("invalid ISO date '{}'", text)); };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
  const char* s = text.data();
  if (std::from_chars(s, s + 4, y).ptr != s + 4 || std::from_chars(s + 5, s + 7, mo).ptr != s + 7 ||
      std::from_chars(s + 8, s + 10, d).ptr != s + 10) {
    throw bad();
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo},
                                        std::chrono::day{d}};
  if (!ymd.ok()) throw bad();
  return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

std::string format_iso_date(int day) {
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

RatingHistories ingest_ratings(std::istream& in, const RatingAlphabet& alphabet) {
  if (alphabet.labels.empty()) throw DataError("rating alphabet is empty");
  for (const auto& label : alphabet.labels) {
    if (label == alphabet.censor_label) throw DataError("censor label is also a rating label");
  }
  RatingHistories out;
  out.alphabet = alphabet;
  // Per entity: day -> rating, later rows overwriting earlier ones.
  std::map<std::string, std::map<int, int>> raw;
  std::string line;
  int number = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "entity_id,date,rating") {
        throw DataError(fmt::format("line {}: expected header entity_id,date,rating", number));
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 3 || cells[0].empty()) {
      throw DataError(fmt::format("line {}: expected entity_id,date,rating", number));
    }
    int day = 0;
    int rating = 0;
    try {
      day = parse_iso_date(cells[1]);
      rating = alphabet.index(cells[2]);
    } catch (const DataError& e) {
      throw DataError(fmt::format("line {}: {}", number, e.what()));
    }
    auto [it, inserted] = raw[cells[0]].insert_or_assign(day, rating);
    (void)it;
    if (!inserted) ++out.duplicate_count;
  }
  if (!header_seen) throw DataError("ratings file is empty");
  for (auto& [id, changes] : raw) {
    EntityPath path{id, {}};
    for (const auto& [day, rating] : changes) path.changes.push_back({day, rating});
    out.entities.push_back(std::move(path));
  }
  return out;
}

void export_ratings(std::ostream& out, const RatingHistories& histories) {
  out << "entity_id,date,rating\n";
  for (const EntityPath& path : histories.entities) {
    for (const RatingChange& c : path.changes) {
      const std::string& label = c.rating == kCensored
                                     ? histories.alphabet.censor_label
                                     : histories.alphabet.labels.at(c.rating);
      out << path.id << ',' << format_iso_date(c.day) << ',' << label << '\n';
    }
  }
}

int rating_before(const EntityPath& path, int day) {
  const auto it = std::lower_bound(
      path.changes.begin(), path.changes.end(), day,
      [](const RatingChange& c, int d) { return c.day < d; });
  if (it == path.changes.begin()) return kCensored;
  return std::prev(it)->rating;
}

MigrationPanel build_panel(const RatingHistories& histories, int step_days, int origin_day,
                           int steps) {
  if (step_days < 1) throw DataError("step_days must be at least 1");
  const int p = histories.alphabet.p();
  if (steps <= 0) {
    int last = origin_day;
    for (const auto& path : histories.entities) {
      if (!path.changes.empty()) last = std::max(last, path.changes.back().day);
    }
    steps = (last - origin_day) / step_days + 1;
  }
  MigrationPanel panel;
  panel.p = p;
  panel.step_length_days = step_days;
  panel.exposures.assign(steps, CountVector::Zero(p));
  panel.counts.assign(steps, CountMatrix::Zero(p, p));
  for (const EntityPath& path : histories.entities) {
    for (int t = 0; t < steps; ++t) {
      const int start = origin_day + t * step_days;
      const int end = start + step_days;
      const int from = rating_before(path, start);
      if (from == kCensored) continue;
      // Any censored spell touching [start, end) removes the entity from
      // this interval; the endpoint rating is then necessarily a rating.
      const auto first = std::lower_bound(
          path.changes.begin(), path.changes.end(), start,
          [](const RatingChange& c, int d) { return c.day < d; });
      bool censored = false;
      int to = from;
      for (auto it = first; it != path.changes.end() && it->day < end; ++it) {
        if (it->rating == kCensored) censored = true;
        to = it->rating;
      }
      if (censored) continue;
      panel.exposures[t](from) += 1;
      panel.counts[t](from, to) += 1;
    }
  }
  return panel;
}

}  // namespace ratingfilter
