#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "hai_sbi/summaries.hpp"

using namespace hai_sbi;

namespace {

EpidemicMatrix matrix(const std::vector<std::vector<int>>& rows) {
  const int n = static_cast<int>(rows.size());
  const int horizon = static_cast<int>(rows.front().size());
  EpidemicMatrix x(n, horizon, MatrixKind::colonization);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < horizon; ++t)
      x.set(i, t, rows[i][t] ? State::infected : State::susceptible);
  return x;
}

struct TraceCase {
  Layout layout;
  FacilityTraces traces;
  EpidemicMatrix x;
};

TraceCase trace_case(std::uint64_t seed) {
  TraceCase c;
  c.layout = room_layout(3, 20, 2);
  SynthConfig cfg;
  cfg.horizon = 30;
  cfg.seed = seed;
  c.traces = synth_traces(c.layout, cfg);
  c.x = simulate_trace(c.layout, c.traces, RateVector({0.3, 0.2, 0.2, 0.2, 0.6}), seed);
  return c;
}

}  // namespace

TEST(InfectedSeries, Counts) {
  EXPECT_EQ(infected_series(matrix({{0, 1}, {1, 1}})), (std::vector<int>{1, 2}));
  EXPECT_EQ(infected_series(matrix({{0, 0, 0}})), (std::vector<int>{0, 0, 0}));
  EpidemicMatrix all(300, 4, MatrixKind::colonization, State::infected);
  EXPECT_EQ(infected_series(all), std::vector<int>(4, 300));
  EpidemicMatrix absent(3, 2, MatrixKind::colonization, State::absent);
  EXPECT_EQ(infected_series(absent), std::vector<int>(2, 0));
}

TEST(FloorSeries, SingleFloorEqualsTotal) {
  const auto f = static_layout(1, 6, 2, 4);
  const auto x = simulate_full(f.layout, SimParams{0.4, 0.1, {}, 3}, RateVector({0.5, 0.5, 0.5}), 4);
  EXPECT_EQ(floor_series(x, f.layout, f.traces).front(), infected_series(x));
}

TEST(FloorSeries, FloorsPartitionTotal) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto c = trace_case(seed);
    const auto floors = floor_series(c.x, c.layout, c.traces);
    const auto total = infected_series(c.x);
    for (int t = 0; t < c.x.horizon(); ++t) {
      int sum = 0;
      for (const auto& l : floors) sum += l[t];
      EXPECT_EQ(sum, total[t]);
    }
  }
}

TEST(FloorSeries, EmptyFloorIsZero) {
  Layout layout = room_layout(2, 2, 1);
  FacilityTraces traces(1, 2, Indexing::patients);
  traces.place(0, 0, 0, 0);
  traces.place(0, 1, 0, 0);
  traces.set_screening(0, 0, 1);
  const auto x = simulate_trace(layout, traces, RateVector({0.1, 0.1, 0.1, 0.1}), 1);
  const auto floors = floor_series(x, layout, traces);
  EXPECT_EQ(floors[0], (std::vector<int>{1, 1}));
  EXPECT_EQ(floors[1], (std::vector<int>{0, 0}));
}

TEST(MultiRoomSeries, Counts) {
  const auto f = static_layout(1, 9, 3);
  // Rooms hold locations {0,1,2}, {3,4,5}, {6,7,8}; infected counts (2, 1, 3).
  const auto x = matrix({{1}, {1}, {0}, {1}, {0}, {0}, {1}, {1}, {1}});
  EXPECT_EQ(multi_room_series(x, f.layout, f.traces), (std::vector<int>{2}));

  const auto single = static_layout(1, 4, 1);
  const auto all = matrix({{1, 1}, {1, 1}, {1, 1}, {1, 1}});
  EXPECT_EQ(multi_room_series(all, single.layout, single.traces), (std::vector<int>{0, 0}));

  const auto pair = static_layout(1, 2, 2);
  EXPECT_EQ(multi_room_series(matrix({{1}, {1}}), pair.layout, pair.traces), (std::vector<int>{1}));
}

TEST(SummaryMatrixTest, StaticScaling) {
  const auto f = static_layout(1, 100, 1);
  std::vector<std::vector<int>> rows(100, std::vector<int>{0});
  for (int i = 0; i < 70; ++i) rows[i][0] = 1;
  const auto s = summary_matrix(matrix(rows), f.layout, f.traces);
  EXPECT_DOUBLE_EQ(s.value(0, 0), 0.70);
  EXPECT_EQ(s.columns(), 3);
  EXPECT_EQ(s.scale_meta().divisor, (std::vector<double>{100, 100, 100}));
}

TEST(SummaryMatrixTest, HomogeneousUseIsFirstColumn) {
  const auto f = static_layout(1, 50, 1, 10);
  const auto x = simulate_full(f.layout, SimParams{0.2, 0.05, {}, 8}, RateVector::homogeneous(0.4), 10);
  const auto s = summary_matrix(x, f.layout, f.traces);
  const auto counts = infected_series(x);
  const auto first = s.flatten({0});
  ASSERT_EQ(first.size(), 10u);
  for (int t = 0; t < 10; ++t) EXPECT_DOUBLE_EQ(first[t], counts[t] / 50.0);
}

TEST(SummaryMatrixTest, EntriesInUnitInterval) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto c = trace_case(seed);
    const auto s = summary_matrix(c.x, c.layout, c.traces);
    EXPECT_EQ(s.columns(), c.layout.n_floors + 2);
    for (double v : s.flatten()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(SummaryMatrixTest, ZeroDivisorColumnIsFlagged) {
  // The second floor is never occupied.
  Layout layout = room_layout(2, 2, 1);
  FacilityTraces traces(1, 2, Indexing::patients);
  traces.place(0, 0, 0, 0);
  traces.place(0, 1, 0, 0);
  traces.set_screening(0, 0, 1);
  const auto x = simulate_trace(layout, traces, RateVector({0.1, 0.1, 0.1, 0.1}), 1);
  const auto s = summary_matrix(x, layout, traces);
  EXPECT_TRUE(s.scale_meta().zero_divisor[2]);
  EXPECT_EQ(s.column(2), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(s.column(0), (std::vector<double>{1.0, 1.0}));
}

TEST(SummaryMatrixTest, PatientOrderDoesNotMatter) {
  const auto c = trace_case(4);
  const int n = c.traces.size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  FacilityTraces traces(n, c.traces.horizon(), Indexing::patients);
  EpidemicMatrix x(n, c.x.horizon(), MatrixKind::colonization, State::absent);
  for (int i = 0; i < n; ++i) {
    const int src = perm[i];
    traces.set_label(i, c.traces.label(src));
    for (int t = 0; t < c.traces.horizon(); ++t) {
      x.set(i, t, c.x.at(src, t));
      if (!c.traces.present(src, t)) continue;
      traces.place(i, t, c.traces.floor(src, t), c.traces.room(src, t));
      traces.set_screening(i, t, c.traces.screening(src, t));
    }
  }
  EXPECT_EQ(summary_matrix(x, c.layout, traces), summary_matrix(c.x, c.layout, c.traces));
}

TEST(ScalarSummary, Mean) {
  const std::vector<double> constant(7, 0.25);
  EXPECT_DOUBLE_EQ(scalar_summary(constant), 0.25);
  const std::vector<double> two{0.0, 1.0};
  EXPECT_DOUBLE_EQ(scalar_summary(two), 0.5);
  EXPECT_THROW(scalar_summary(std::vector<double>{}), std::invalid_argument);
}

TEST(ScalarSummary, MatchesDirectMean) {
  const auto f = static_layout(1, 100, 1, 52);
  const auto x = simulate_full(f.layout, SimParams{0.1, 0.05, {}, 12}, RateVector::homogeneous(0.15), 52);
  const auto series = summary_matrix(x, f.layout, f.traces).column(0);
  const auto counts = infected_series(x);
  double direct = 0.0;
  for (int c : counts) direct += c / 100.0;
  EXPECT_NEAR(scalar_summary(series), direct / 52.0, 1e-15);
}

TEST(SummaryFiles, RoundTripRecoversCounts) {
  const auto c = trace_case(2);
  const auto s = summary_matrix(c.x, c.layout, c.traces);
  const auto path = (std::filesystem::temp_directory_path() / "hai_sbi_summary_rt.csv").string();
  write_summary_csv(s, path);
  EXPECT_EQ(read_summary_csv(path), s);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}
