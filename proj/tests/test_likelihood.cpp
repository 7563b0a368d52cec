#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "hai_sbi/likelihood.hpp"
#include "test_util.hpp"

using namespace hai_sbi;

namespace {

SimParams params(double alpha, double gamma, std::optional<double> eta = {}) {
  SimParams p;
  p.alpha = alpha;
  p.gamma = gamma;
  p.eta = eta;
  return p;
}

// Cell c of an n x horizon matrix is bit c of `bits`, step-major.
EpidemicMatrix from_bits(std::uint32_t bits, int n, int horizon,
                         MatrixKind kind = MatrixKind::colonization) {
  EpidemicMatrix x(n, horizon, kind);
  for (int c = 0; c < n * horizon; ++c) {
    x.set(c % n, c / n, (bits >> c) & 1u ? State::infected : State::susceptible);
  }
  return x;
}

std::uint32_t to_bits(const EpidemicMatrix& x) {
  std::uint32_t bits = 0;
  for (int c = 0; c < x.size() * x.horizon(); ++c) {
    if (x.infected(c % x.size(), c / x.size())) bits |= 1u << c;
  }
  return bits;
}

EpidemicMatrix row(std::initializer_list<int> v, MatrixKind kind = MatrixKind::colonization) {
  EpidemicMatrix x(1, static_cast<int>(v.size()), kind);
  int t = 0;
  for (int s : v) x.set(0, t++, s ? State::infected : State::susceptible);
  return x;
}

}  // namespace

TEST(Transition, NoTurnoverKeepsInfected) {
  EXPECT_EQ(transition_prob(true, true, 0.7, 0.0, 0.3), 1.0);
  EXPECT_EQ(transition_log_prob(true, true, 0.7, 0.0, 0.3), 0.0);
}

TEST(Transition, InfectedStaysWithTurnover) {
  EXPECT_NEAR(transition_prob(true, true, 0.0, 0.05, 0.1), 0.955, 1e-15);
}

TEST(Transition, NormalizedOnGrid) {
  const double grid[] = {0.0, 0.01, 0.3, 0.5, 0.99, 1.0};
  const double lambdas[] = {0.0, 1e-9, 0.1, 2.0, 50.0};
  for (bool prev : {false, true})
    for (double lambda : lambdas)
      for (double gamma : grid)
        for (double alpha : grid) {
          const double sum = transition_prob(prev, false, lambda, gamma, alpha) +
                             transition_prob(prev, true, lambda, gamma, alpha);
          EXPECT_NEAR(sum, 1.0, 1e-14) << prev << ' ' << lambda << ' ' << gamma << ' ' << alpha;
        }
}

TEST(FullLikelihood, SingleSusceptibleConstantHazard) {
  const auto x = row({0, 0});
  const HazardFn constant = [](int, int, std::span<const State>) { return 0.1; };
  EXPECT_NEAR(log_likelihood_with_hazards(x, params(0.0, 0.0), constant), -0.1, 1e-15);
}

TEST(FullLikelihood, CertainSeedNoTurnover) {
  const auto f = static_layout(1, 1, 1);
  EXPECT_EQ(log_likelihood_full(row({1, 1}), RateVector::homogeneous(0.4), params(1.0, 0.0), f.layout),
            0.0);
  EXPECT_EQ(log_likelihood_full(row({0, 0}), RateVector::homogeneous(0.4), params(1.0, 0.0), f.layout),
            kNegInf);
}

TEST(FullLikelihood, SumsToOneOverAllMatrices) {
  const auto f = static_layout(1, 2, 2);
  const RateVector rates({0.3, 0.2, 0.5});
  const auto plan = detail::static_plan(f.layout, 2);
  for (auto p : {params(0.2, 0.1), params(0.0, 0.0), params(0.5, 1.0)}) {
    double total = 0.0;
    for (std::uint32_t bits = 0; bits < 16; ++bits) {
      total += std::exp(log_likelihood_full(from_bits(bits, 2, 2), rates, p, plan));
    }
    EXPECT_NEAR(total, 1.0, 1e-13);
  }
}

TEST(FullLikelihood, MatchesSimulatorFrequencies) {
  const auto f = static_layout(1, 2, 2);
  const auto plan = detail::static_plan(f.layout, 2);
  const RateVector rates({0.6, 0.4, 0.9});
  SimParams p = params(0.3, 0.2);
  const int runs = 100000;
  std::map<std::uint32_t, int> counts;
  for (int r = 0; r < runs; ++r) {
    p.seed = rng::derive_seed(2024, r);
    ++counts[to_bits(simulate_full(plan, p, rates))];
  }
  for (std::uint32_t bits = 0; bits < 16; ++bits) {
    const double prob = std::exp(log_likelihood_full(from_bits(bits, 2, 2), rates, p, plan));
    EXPECT_TRUE(testutil::within_se(counts[bits], runs, prob)) << bits << ": " << counts[bits];
  }
}

TEST(FullLikelihood, HomogeneousReductionIsExact) {
  const auto f = static_layout(2, 30, 2);
  const auto plan = detail::static_plan(f.layout, 40);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SimParams p = params(0.1, 0.05);
    p.seed = seed;
    const auto rates = RateVector::homogeneous(0.3, 2);
    const auto x = simulate_full(plan, p, rates);
    EXPECT_EQ(log_likelihood_full(x, rates, p, plan), log_likelihood_homogeneous(x, 0.3, p));
  }
}

TEST(FullLikelihood, RejectsAbsentEntries) {
  EpidemicMatrix x(1, 2, MatrixKind::colonization, State::absent);
  EXPECT_THROW(log_likelihood_homogeneous(x, 0.1, params(0.1, 0.0)), std::invalid_argument);
}

TEST(Observation, WorkedExample) {
  EXPECT_NEAR(std::exp(obs_log_prob_given_X(row({0, 1}), row({1, 1}), 0.1)), 0.171, 1e-14);
}

TEST(Observation, CertainObservation) {
  for (auto law : {ObservationLaw::cumulative, ObservationLaw::screened}) {
    const auto x = row({0, 1, 1});
    EXPECT_EQ(obs_log_prob_given_X(x, x, 1.0, law), 0.0);
  }
}

TEST(Observation, NothingToSee) {
  const auto zero = row({0, 0, 0});
  EXPECT_EQ(obs_log_prob_given_X(zero, zero, 0.4), 0.0);
}

TEST(Observation, ImpossibleObservations) {
  // Observed then unobserved, and observed without colonization.
  EXPECT_EQ(obs_log_prob_given_X(row({1, 0}), row({1, 1}), 0.5), kNegInf);
  EXPECT_EQ(obs_log_prob_given_X(row({0, 1}), row({0, 0}), 0.5), kNegInf);
}

TEST(Observation, SumsToOneOverY) {
  for (auto law : {ObservationLaw::cumulative, ObservationLaw::screened}) {
    for (std::uint32_t xb : {0u, 0b110100u, 0b111111u, 0b101000u}) {
      const auto x = from_bits(xb, 2, 3);
      double total = 0.0;
      for (std::uint32_t yb = 0; yb < 64; ++yb) {
        total += std::exp(obs_log_prob_given_X(from_bits(yb, 2, 3, MatrixKind::observation), x, 0.35, law));
      }
      EXPECT_NEAR(total, 1.0, 1e-13) << xb;
    }
  }
}

TEST(Marginal, CertainObservationEqualsComplete) {
  const auto f = static_layout(1, 2, 2);
  const auto plan = detail::static_plan(f.layout, 3);
  const RateVector rates({0.3, 0.2, 0.5});
  const auto p = params(0.25, 0.0, 1.0);
  for (std::uint32_t bits : {0u, 0b110101u, 0b111101u}) {
    const auto y = from_bits(bits, 2, 3);
    EXPECT_NEAR(marginal_log_lik_partial_enum(y, rates, p, plan), log_likelihood_full(y, rates, p, plan),
                1e-12);
  }
}

TEST(Marginal, NothingHappens) {
  const auto f = static_layout(1, 2, 2);
  const auto plan = detail::static_plan(f.layout, 3);
  const auto y = from_bits(0, 2, 3);
  EXPECT_EQ(marginal_log_lik_partial_enum(y, RateVector({0, 0, 0}), params(0.0, 0.0, 0.3), plan), 0.0);
}

TEST(Marginal, SizeGuard) {
  const auto f = static_layout(1, 3, 3);
  const auto plan = detail::static_plan(f.layout, 7);
  EpidemicMatrix y(3, 7, MatrixKind::observation);
  EXPECT_THROW(marginal_log_lik_partial_enum(y, RateVector({0.1, 0.1, 0.1}), params(0.1, 0.0, 0.3), plan),
               std::invalid_argument);
}

TEST(Marginal, MatchesSimulatedObservationFrequencies) {
  const auto f = static_layout(1, 2, 2);
  const auto plan = detail::static_plan(f.layout, 3);
  const RateVector rates({0.5, 0.3, 0.8});
  SimParams p = params(0.3, 0.0, 0.4);
  const int runs = 100000;
  std::map<std::uint32_t, int> counts;
  for (int r = 0; r < runs; ++r) {
    p.seed = rng::derive_seed(77, r);
    ++counts[to_bits(simulate_partial(plan, p, rates).observation)];
  }
  double total = 0.0;
  for (std::uint32_t bits = 0; bits < 64; ++bits) {
    const double prob =
        std::exp(marginal_log_lik_partial_enum(from_bits(bits, 2, 3, MatrixKind::observation), rates, p, plan));
    total += prob;
    EXPECT_TRUE(testutil::within_se(counts[bits], runs, prob)) << bits << ": " << counts[bits];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(ReproductionNumber, HomogeneousExample) {
  EXPECT_NEAR(r0(0.15, 0.05, 0.1), 10.0 / 3.0, 1e-15);
  EXPECT_EQ(r0(0.0, 0.05, 0.1), 0.0);
}

TEST(ReproductionNumber, HeterogeneousExample) {
  const RateVector rates({0.05, 0.02, 0.04, 0.06, 0.08, 0.1, 0.05});
  EXPECT_NEAR(r0(rates, 0.05, 0.1), 0.16 / 0.045, 1e-12);
  EXPECT_NEAR(r0(rates, 0.05, 0.1), 3.5556, 5e-5);
}

TEST(ReproductionNumber, UndefinedWithoutRemoval) {
  EXPECT_THROW(r0(0.1, 0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(r0(0.1, 0.05, 1.0), std::invalid_argument);
}
