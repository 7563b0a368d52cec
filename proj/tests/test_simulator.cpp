#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "hai_sbi/simulator.hpp"
#include "test_util.hpp"

using namespace hai_sbi;

namespace {

std::vector<State> states(std::initializer_list<int> v) {
  std::vector<State> out;
  for (int s : v) out.push_back(s ? State::infected : State::susceptible);
  return out;
}

SimParams params(double alpha, double gamma, std::uint64_t seed, std::optional<double> eta = {}) {
  SimParams p;
  p.alpha = alpha;
  p.gamma = gamma;
  p.eta = eta;
  p.seed = seed;
  return p;
}

const RateVector kPlantedRates({0.05, 0.02, 0.04, 0.06, 0.08, 0.1, 0.05});

}  // namespace

TEST(ForceOfInfection, HomogeneousHalfInfected) {
  const auto f = static_layout(1, 100, 1);
  std::vector<State> prev(100, State::susceptible);
  for (int i = 0; i < 50; ++i) prev[i] = State::infected;
  const auto c = contact_matrices(f.layout, f.traces, 0);
  const RateVector rates = RateVector::homogeneous(0.2);
  EXPECT_DOUBLE_EQ(force_of_infection(60, prev, c, rates), 0.1);

  const ContactPlan plan(f.layout, f.traces);
  const InfectionPressure pressure(plan.step(0), prev, rates);
  EXPECT_DOUBLE_EQ(pressure.hazard(0, f.layout.room_of[60]), 0.1);
}

TEST(ForceOfInfection, NoInfectedGivesZero) {
  const auto f = static_layout(2, 10, 2);
  const std::vector<State> prev(20, State::susceptible);
  const auto c = contact_matrices(f.layout, f.traces, 0);
  EXPECT_EQ(force_of_infection(3, prev, c, RateVector({1.0, 1.0, 1.0, 1.0})), 0.0);
}

TEST(ForceOfInfection, InfectedRoommateOnly) {
  const auto f = static_layout(1, 2, 2);
  const auto prev = states({1, 0});
  const auto c = contact_matrices(f.layout, f.traces, 0);
  EXPECT_DOUBLE_EQ(force_of_infection(1, prev, c, RateVector({0.0, 0.0, 0.3})), 0.15);
}

TEST(ForceOfInfection, AgreesWithAggregatePressure) {
  const auto f = static_layout(3, 8, 2);
  const ContactPlan plan(f.layout, f.traces);
  const auto c = contact_matrices(f.layout, f.traces, 0);
  const RateVector rates({0.3, 0.1, 0.2, 0.4, 0.25});
  rng::Stream s(17);
  std::vector<State> prev(24);
  for (auto& v : prev) v = s.bernoulli(0.4) ? State::infected : State::susceptible;
  const InfectionPressure pressure(plan.step(0), prev, rates);
  for (int i = 0; i < 24; ++i) {
    if (prev[i] == State::infected) continue;
    EXPECT_NEAR(force_of_infection(i, prev, c, rates),
                pressure.hazard(f.layout.floor_of(i), f.layout.room_of[i]), 1e-15);
  }
}

TEST(ForceOfInfection, LoneOccupantTermsVanish) {
  // A floor (and room) with a single occupant contributes nothing.
  const auto f = static_layout(2, 1, 1);
  const auto prev = states({1, 0});
  const auto c = contact_matrices(f.layout, f.traces, 0);
  EXPECT_EQ(force_of_infection(1, prev, c, RateVector({0.0, 5.0, 5.0, 5.0})), 0.0);
  EXPECT_DOUBLE_EQ(force_of_infection(1, prev, c, RateVector({0.4, 5.0, 5.0, 5.0})), 0.2);
}

TEST(SimulateFull, NoSeedInfections) {
  const auto f = static_layout(2, 10, 2);
  const auto x = simulate_full(f.layout, params(0.0, 0.0, 1), RateVector({1, 1, 1, 1}), 20);
  for (int t = 0; t < x.horizon(); ++t)
    for (int i = 0; i < x.size(); ++i) EXPECT_FALSE(x.infected(i, t));
}

TEST(SimulateFull, NoEventsKeepsFirstColumn) {
  const auto f = static_layout(2, 10, 2);
  const auto x = simulate_full(f.layout, params(0.4, 0.0, 5), RateVector({0, 0, 0, 0}), 15);
  for (int t = 1; t < x.horizon(); ++t)
    for (int i = 0; i < x.size(); ++i) EXPECT_EQ(x.at(i, t), x.at(i, 0));
}

TEST(SimulateFull, Deterministic) {
  const auto f = static_layout(5, 20, 2);
  const auto a = simulate_full(f.layout, params(0.1, 0.05, 77), kPlantedRates, 52);
  const auto b = simulate_full(f.layout, params(0.1, 0.05, 77), kPlantedRates, 52);
  const auto c = simulate_full(f.layout, params(0.1, 0.05, 78), kPlantedRates, 52);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
}

TEST(SimulateFull, RateDimensionMismatch) {
  const auto f = static_layout(5, 20, 2);
  EXPECT_THROW(simulate_full(f.layout, params(0.1, 0.05, 1), RateVector({0.1, 0.1, 0.1}), 5),
               std::invalid_argument);
}

TEST(SimulateFull, MonotoneWithoutTurnover) {
  const auto f = static_layout(5, 20, 2);
  const auto x = simulate_full(f.layout, params(0.1, 0.0, 3), kPlantedRates, 52);
  for (int i = 0; i < x.size(); ++i)
    for (int t = 1; t < x.horizon(); ++t)
      EXPECT_TRUE(!x.infected(i, t - 1) || x.infected(i, t));
}

TEST(SimulateFull, HomogeneousStepFrequencyMatchesHazard) {
  // Pooled over replicate steps: hits vs sum of 1 - exp(-beta I / N).
  const auto f = static_layout(1, 50, 1, 30);
  const ContactPlan plan(f.layout, f.traces);
  const double beta = 0.6;
  double hits = 0.0, expected = 0.0, variance = 0.0;
  long trials = 0;
  for (std::uint64_t rep = 0; rep < 200; ++rep) {
    const auto x = simulate_full(plan, params(0.1, 0.0, 1000 + rep), RateVector::homogeneous(beta));
    for (int t = 1; t < x.horizon(); ++t) {
      int infected = 0;
      for (State s : x.step(t - 1)) infected += s == State::infected;
      const double p = -std::expm1(-beta * infected / 50.0);
      for (int i = 0; i < 50; ++i) {
        if (x.infected(i, t - 1)) continue;
        ++trials;
        hits += x.infected(i, t);
        expected += p;
        variance += p * (1 - p);
      }
    }
  }
  ASSERT_GE(trials, 10000);
  EXPECT_LE(std::abs(hits - expected), 3.0 * std::sqrt(variance));
}

TEST(SimulatePartial, CertainObservationCopiesX) {
  const auto f = static_layout(5, 20, 2);
  const auto po = simulate_partial(f.layout, params(0.1, 0.05, 9, 1.0), kPlantedRates, 52);
  EXPECT_EQ(po.observation.kind(), MatrixKind::observation);
  for (int t = 0; t < 52; ++t)
    for (int i = 0; i < 100; ++i) EXPECT_EQ(po.observation.at(i, t), po.colonization.at(i, t));
}

TEST(SimulatePartial, NothingToObserve) {
  const auto f = static_layout(5, 20, 2);
  const auto po = simulate_partial(f.layout, params(0.0, 0.0, 9, 0.0), kPlantedRates, 20);
  for (int t = 0; t < 20; ++t)
    for (int i = 0; i < 100; ++i) EXPECT_FALSE(po.observation.infected(i, t));
}

TEST(SimulatePartial, ObservationBoundedByColonization) {
  const auto f = static_layout(5, 20, 2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto po = simulate_partial(f.layout, params(0.2, 0.05, seed, 0.3), kPlantedRates, 52);
    for (int t = 0; t < 52; ++t)
      for (int i = 0; i < 100; ++i)
        EXPECT_TRUE(po.colonization.infected(i, t) || !po.observation.infected(i, t));
  }
}

TEST(SimulatePartial, SameDrawsAsFull) {
  const auto f = static_layout(5, 20, 2);
  const auto po = simulate_partial(f.layout, params(0.1, 0.05, 31, 0.2), kPlantedRates, 52);
  EXPECT_EQ(po.colonization, simulate_full(f.layout, params(0.1, 0.05, 31), kPlantedRates, 52));
}

TEST(SimulatePartial, RequiresEta) {
  const auto f = static_layout(1, 4, 2);
  EXPECT_THROW(simulate_partial(f.layout, params(0.1, 0.0, 1), RateVector::homogeneous(0.1), 3),
               std::invalid_argument);
}

namespace {

struct TraceFixture {
  Layout layout;
  FacilityTraces traces;
};

// Two rooms of two beds on one floor.
TraceFixture small_trace(int n, int horizon) {
  TraceFixture f;
  f.layout.n_floors = 1;
  f.layout.floor_of_room = {0, 0};
  f.layout.room_label = {1, 2};
  f.layout.max_room_occupancy = 2;
  f.traces = FacilityTraces(n, horizon, Indexing::patients);
  return f;
}

}  // namespace

TEST(SimulateTrace, AllScreenedPositive) {
  const Layout layout = room_layout(3, 12, 2);
  SynthConfig cfg;
  cfg.screen_positive_rate = 1.0;
  cfg.horizon = 20;
  const auto tr = synth_traces(layout, cfg);
  const auto x = simulate_trace(layout, tr, RateVector({0.1, 0.1, 0.1, 0.1, 0.1}), 4);
  for (int i = 0; i < tr.size(); ++i)
    for (int t = 0; t < tr.horizon(); ++t)
      EXPECT_EQ(x.at(i, t), tr.present(i, t) ? State::infected : State::absent);
}

TEST(SimulateTrace, ZeroRatesFollowScreening) {
  const Layout layout = room_layout(3, 12, 2);
  SynthConfig cfg;
  cfg.horizon = 20;
  const auto tr = synth_traces(layout, cfg);
  const auto x = simulate_trace(layout, tr, RateVector({0, 0, 0, 0, 0}), 4);
  for (int i = 0; i < tr.size(); ++i) {
    int status = kNone;
    for (int t = 0; t < tr.horizon(); ++t) {
      if (!tr.present(i, t)) {
        EXPECT_EQ(x.at(i, t), State::absent);
        continue;
      }
      if (tr.admitted_at(i, t)) status = tr.screening(i, t);
      EXPECT_EQ(x.at(i, t), status == 1 ? State::infected : State::susceptible);
    }
  }
}

TEST(SimulateTrace, AbsentPatientDoesNotInfect) {
  // Patient 0 is infected at step 0 and leaves; patient 1 shares the room.
  auto f = small_trace(2, 3);
  f.traces.place(0, 0, 0, 0);
  f.traces.set_screening(0, 0, 1);
  for (int t = 0; t < 3; ++t) f.traces.place(1, t, 0, 0);
  f.traces.set_screening(1, 0, 0);
  const RateVector huge({0.0, 0.0, 1e6});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = simulate_trace(f.layout, f.traces, huge, seed);
    EXPECT_EQ(x.at(0, 1), State::absent);
    // Step 1 hazard uses step-0 states but step-1 contacts: nobody infected remains.
    EXPECT_EQ(x.at(1, 1), State::susceptible);
    EXPECT_EQ(x.at(1, 2), State::susceptible);
  }
  // Control: if patient 0 stays, the roommate is infected at step 1.
  f.traces.place(0, 1, 0, 0);
  const auto x = simulate_trace(f.layout, f.traces, huge, 0);
  EXPECT_EQ(x.at(1, 1), State::infected);
}

TEST(SimulateTrace, AdmissionStepIsImmune) {
  auto f = small_trace(2, 2);
  f.traces.place(0, 0, 0, 0);
  f.traces.place(0, 1, 0, 0);
  f.traces.set_screening(0, 0, 1);
  f.traces.place(1, 1, 0, 0);  // admitted at step 1 next to an infected patient
  f.traces.set_screening(1, 1, 0);
  const auto x = simulate_trace(f.layout, f.traces, RateVector({1e6, 1e6, 1e6}), 1);
  EXPECT_EQ(x.at(1, 1), State::susceptible);
}

TEST(SimulateTrace, InvalidTracesRejected) {
  auto f = small_trace(1, 2);
  f.traces.place(0, 0, 0, 0);  // no admission screening
  EXPECT_THROW(simulate_trace(f.layout, f.traces, RateVector({0.1, 0.1, 0.1}), 1), ValidationError);
}

TEST(Intervention, IdentityKeepsRates) {
  EXPECT_EQ(apply_intervention(kPlantedRates, scenarios::identity()), kPlantedRates);
}

TEST(Intervention, FacilityReduction) {
  const RateVector before = kPlantedRates;
  const auto r = apply_intervention(kPlantedRates, {0.75, {}, 1.0});
  EXPECT_DOUBLE_EQ(r.facility(), 0.0375);
  EXPECT_EQ(kPlantedRates, before);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(r.floor(k), kPlantedRates.floor(k));
}

TEST(Intervention, FloorIsolation) {
  const auto r = apply_intervention(kPlantedRates, scenarios::floor_isolation(5));
  for (int k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(r.floor(k), 0.1 * kPlantedRates.floor(k));
  EXPECT_EQ(r.facility(), kPlantedRates.facility());
  EXPECT_EQ(r.room(), kPlantedRates.room());
  EXPECT_EQ(apply_intervention(kPlantedRates, scenarios::room_isolation()).room(), 0.0);
}

TEST(Intervention, NegativeMultiplierRejected) {
  EXPECT_THROW(apply_intervention(kPlantedRates, {-0.1, {}, 1.0}), std::invalid_argument);
  EXPECT_THROW(apply_intervention(kPlantedRates, {1.0, {1, 1}, 1.0}), std::invalid_argument);
}

TEST(RateVectorTest, RejectsNegativeOrShort) {
  EXPECT_THROW(RateVector({0.1, -0.1, 0.1}), std::invalid_argument);
  EXPECT_THROW(RateVector({0.1, 0.1}), std::invalid_argument);
  EXPECT_THROW(RateVector({0.1, NAN, 0.1}), std::invalid_argument);
}

TEST(MatrixFiles, RoundTripWithAbsence) {
  const Layout layout = room_layout(2, 6, 2);
  SynthConfig cfg;
  cfg.horizon = 10;
  const auto tr = synth_traces(layout, cfg);
  const auto x = simulate_trace(layout, tr, RateVector({0.5, 0.5, 0.5, 0.5}), 2);
  const auto path = (std::filesystem::temp_directory_path() / "hai_sbi_matrix_rt.csv").string();
  write_matrix_csv(x, path, &tr);
  const auto back = read_matrix_csv(path);
  ASSERT_EQ(back.size(), x.size());
  ASSERT_EQ(back.horizon(), x.horizon());
  for (int i = 0; i < x.size(); ++i)
    for (int t = 0; t < x.horizon(); ++t) EXPECT_EQ(back.at(i, t), x.at(i, t));
  std::filesystem::remove(path);
}
