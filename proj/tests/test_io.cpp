#include <gtest/gtest.h>

#include <sstream>

#include "ratingfilter/filter_continuous.hpp"
#include "ratingfilter/io.hpp"
#include "support.hpp"

using namespace ratingfilter;

namespace {

MigrationPanel sample_panel() {
  Rng rng(10);
  const HiddenFactorSpec f = rftest::random_factor(rng, 2);
  const MigrationLaw law = rftest::random_law(rng, 2, 3);
  return rftest::random_panel(rng, f, law, 25, 12, 3);
}

template <typename Write, typename Read>
auto round_trip(Write write, Read read) {
  std::ostringstream out;
  write(out);
  std::istringstream in(out.str());
  return read(in);
}

}  // namespace

TEST(PanelCsv, RoundTrip) {
  const MigrationPanel panel = sample_panel();
  const MigrationPanel back = round_trip([&](std::ostream& o) { write_panel_csv(o, panel); },
                                         [](std::istream& i) { return read_panel_csv(i, 30); });
  ASSERT_EQ(back.steps(), panel.steps());
  EXPECT_EQ(back.p, 3);
  for (int t = 0; t < panel.steps(); ++t) {
    EXPECT_EQ(back.exposures[t], panel.exposures[t]);
    EXPECT_EQ(back.counts[t], panel.counts[t]);
  }
}

TEST(PanelCsv, HeaderLayout) {
  std::ostringstream out;
  write_panel_csv(out, MigrationPanel{2, {}, {}, 1});
  EXPECT_EQ(out.str(), "t,Y_1,Y_2,N_1_1,N_1_2,N_2_1,N_2_2\n");
}

TEST(PanelCsv, MalformedInputs) {
  auto read = [](const std::string& text) {
    std::istringstream in(text);
    return read_panel_csv(in, 1);
  };
  EXPECT_THROW(read(""), DataError);
  EXPECT_THROW(read("t,Y_1,Y_2,N_1_1\n"), DataError);
  EXPECT_THROW(read("t,Y_1,N_1_1\n1,2\n"), DataError);
  EXPECT_THROW(read("t,Y_1,N_1_1\n1,x,2\n"), DataError);
  EXPECT_THROW(read("t,Y_1,N_1_1\n2,2,2\n"), DataError);
  // Conservation violated.
  EXPECT_THROW(read("t,Y_1,Y_2,N_1_1,N_1_2,N_2_1,N_2_2\n1,3,1,2,2,0,1\n"), DataError);
  try {
    read("t,Y_1,N_1_1\n1,2,2\n1,2,2.5\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  // Blank lines and CRLF endings are tolerated.
  const MigrationPanel ok = read("t,Y_1,N_1_1\r\n\r\n1,2,2\r\n");
  EXPECT_EQ(ok.steps(), 1);
}

TEST(EventsCsv, RoundTripWithResets) {
  EventStream s{10.0, CountVector(2), {}, {}};
  s.initial_exposures << 3, 1;
  s.events.push_back({0.25, 0, 1, s.initial_exposures});
  CountVector y(2);
  y << 2, 2;
  s.events.push_back({1.0 / 3.0, 1, 0, y});
  CountVector r(2);
  r << 4, 2;
  s.resets.push_back({5.0, r});
  CountVector after(2);
  after << 4, 2;
  s.events.push_back({7.5, 0, 1, after});
  const EventStream back = round_trip([&](std::ostream& o) { write_events_csv(o, s); },
                                      [](std::istream& i) { return read_events_csv(i); });
  EXPECT_EQ(back.horizon, 10.0);
  ASSERT_EQ(back.events.size(), 3u);
  EXPECT_EQ(back.events[1].time, 1.0 / 3.0);  // 17 digits round-trip exactly
  EXPECT_EQ(back.events[2].exposures, after);
  ASSERT_EQ(back.resets.size(), 1u);
  EXPECT_EQ(back.resets[0].exposures, r);
}

TEST(EventsCsv, MalformedInputs) {
  auto read = [](const std::string& text) {
    std::istringstream in(text);
    return read_events_csv(in);
  };
  EXPECT_THROW(read("time,from_rating,to_rating\n"), DataError);
  EXPECT_THROW(read("# exposures,1,1\n# horizon,1\ntime,from,to\n"), DataError);
  EXPECT_THROW(read("# exposures,1,1\n# horizon,1\ntime,from_rating,to_rating\n0.5,1,3\n"),
               DataError);
  // Second jump out of an empty rating.
  EXPECT_THROW(
      read("# exposures,1,0\n# horizon,1\ntime,from_rating,to_rating\n0.1,1,2\n0.2,1,2\n"),
      DataError);
}

TEST(TrajectoryCsv, RoundTrip) {
  Rng rng(2);
  std::vector<double> times{0.0, 1.0, 2.0};
  std::vector<FilterState> states;
  std::vector<Matrix> forecasts;
  for (double t : times) {
    states.push_back({rng.simplex(3), t});
    forecasts.push_back(rftest::random_stochastic(rng, 2));
  }
  const TrajectoryTable back =
      round_trip([&](std::ostream& o) { write_trajectory_csv(o, times, states, forecasts); },
                 [](std::istream& i) { return read_trajectory_csv(i); });
  EXPECT_EQ(back.m, 3);
  EXPECT_EQ(back.p, 2);
  EXPECT_EQ(back.times, times);
  for (std::size_t i = 0; i < times.size(); ++i) {
    EXPECT_EQ(back.probs[i], states[i].probs);
    EXPECT_EQ(back.forecasts[i], forecasts[i]);
  }
}

TEST(ModelJson, RoundTripIsExact) {
  Rng rng(1);
  const HiddenFactorSpec f = rftest::random_factor(rng, 3);
  const MigrationLaw law = rftest::random_law(rng, 3, 4);
  const Json doc = model_to_json(f, law);
  const ModelInit back = model_from_json(Json::parse(doc.dump()));
  EXPECT_EQ(back.factor.pi, f.pi);
  EXPECT_EQ(back.factor.trans, f.trans);
  EXPECT_EQ(back.factor.mode, Mode::Discrete);
  for (int h = 0; h < 3; ++h) EXPECT_EQ(back.law.per_state[h], law.per_state[h]);
  EXPECT_EQ(doc.dump(), model_to_json(back.factor, back.law).dump());
}

TEST(ModelJson, MalformedDocuments) {
  const Json good = Json::parse(
      R"({"mode":"discrete","m":1,"p":2,"pi":[1],"trans":[[1]],"law":[[[0.9,0.1],[0.2,0.8]]]})");
  EXPECT_NO_THROW(model_from_json(good));
  Json missing = good;
  missing.erase("trans");
  EXPECT_THROW(model_from_json(missing), ModelError);
  Json ragged = good;
  ragged["law"][0][1] = Json::array({0.2});
  EXPECT_THROW(model_from_json(ragged), ModelError);
  Json wrong_type = good;
  wrong_type["m"] = "one";
  EXPECT_THROW(model_from_json(wrong_type), ModelError);
  Json bad_mode = good;
  bad_mode["mode"] = "hourly";
  EXPECT_THROW(model_from_json(bad_mode), ModelError);
}

TEST(Files, MissingFileIsDataError) {
  EXPECT_THROW(read_text_file("/nonexistent/dir/file.csv"), DataError);
}
