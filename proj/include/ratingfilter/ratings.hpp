// Entity-level rating histories and their aggregation into migration panels.
//
// Dates are held as days since 1970-01-01. Interval t of a panel covers the
// days [origin + t * step, origin + (t + 1) * step); an entity's rating at a
// boundary b is its last event dated strictly before b, so an event on day b
// belongs to the interval starting at b.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ratingfilter/model.hpp"

namespace ratingfilter {

// Ordered rating labels (best first) plus the label meaning "not rated".
struct RatingAlphabet {
  std::vector<std::string> labels;
  std::string censor_label;

  int p() const { return static_cast<int>(labels.size()); }
  // Rating index, kCensored for the censor label; throws DataError otherwise.
  int index(const std::string& label) const;
};

inline constexpr int kCensored = -1;

struct RatingChange {
  int day = 0;
  int rating = kCensored;

  bool operator==(const RatingChange&) const = default;
};

struct EntityPath {
  std::string id;
  // Strictly increasing days.
  std::vector<RatingChange> changes;

  bool operator==(const EntityPath&) const = default;
};

struct RatingHistories {
  RatingAlphabet alphabet;
  // Sorted by id.
  std::vector<EntityPath> entities;
  // Same-entity same-date rows overridden by a later row.
  int duplicate_count = 0;
};

// "YYYY-MM-DD" <-> days since the epoch.
int parse_iso_date(const std::string& text);
std::string format_iso_date(int day);

// CSV with header entity_id,date,rating. Rows may come in any order; for an
// entity rated twice on one date the later row wins.
RatingHistories ingest_ratings(std::istream& in, const RatingAlphabet& alphabet);
void export_ratings(std::ostream& out, const RatingHistories& histories);

// Rating at the start of `day`, kCensored when unrated or not yet observed.
int rating_before(const EntityPath& path, int day);

// steps <= 0: enough intervals to cover the last recorded change.
MigrationPanel build_panel(const RatingHistories& histories, int step_days, int origin_day,
                           int steps = 0);

}  // namespace ratingfilter
