#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "hai_sbi/rng.hpp"
#include "test_util.hpp"

using namespace hai_sbi::rng;

TEST(Philox, KnownAnswerZero) {
  const Block out = philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerOnes) {
  const Block out = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                  {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out, (Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPi) {
  const Block out = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                  {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out, (Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(CellUniform, PureFunctionOfKey) {
  const double a = cell_uniform(7, 3, 11, Event::infection);
  // Draw other cells in between; the value must not move.
  for (std::uint32_t i = 0; i < 100; ++i) cell_uniform(7, 3, i, Event::discharge);
  EXPECT_EQ(a, cell_uniform(7, 3, 11, Event::infection));
  EXPECT_NE(a, cell_uniform(7, 3, 11, Event::discharge));
  EXPECT_NE(a, cell_uniform(8, 3, 11, Event::infection));
  EXPECT_NE(a, cell_uniform(7, 4, 11, Event::infection));
}

TEST(CellUniform, UniformOnOpenInterval) {
  std::vector<double> u;
  for (std::uint32_t t = 0; t < 100; ++t) {
    for (std::uint32_t i = 0; i < 100; ++i) {
      const double v = cell_uniform(42, t, i, Event::infection);
      ASSERT_GT(v, 0.0);
      ASSERT_LT(v, 1.0);
      u.push_back(v);
    }
  }
  EXPECT_LT(testutil::ks_statistic(u, [](double x) { return x; }), testutil::ks_critical(u.size()));
}

TEST(DeriveSeed, DistinctChildren) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t k = 0; k < 10000; ++k) seen.insert(derive_seed(5, k));
  EXPECT_EQ(seen.size(), 10000u);
  EXPECT_NE(derive_seed(5, 0), derive_seed(6, 0));
}

TEST(Stream, Deterministic) {
  Stream a(9, 2), b(9, 2), c(9, 3);
  for (int k = 0; k < 50; ++k) {
    const auto va = a();
    EXPECT_EQ(va, b());
    EXPECT_NE(va, c());
  }
}

TEST(Stream, NormalMatchesStandardNormal) {
  Stream s(123);
  std::vector<double> z(20000);
  for (auto& v : z) v = s.normal();
  EXPECT_LT(testutil::ks_statistic(z, testutil::normal_cdf), testutil::ks_critical(z.size()));
}

TEST(Stream, GeometricMean) {
  Stream s(77);
  const double p = 0.2;
  double total = 0.0;
  const int n = 50000;
  for (int k = 0; k < n; ++k) total += static_cast<double>(s.geometric(p));
  // Mean failures (1-p)/p = 4, sd sqrt(1-p)/p ~ 4.47.
  EXPECT_NEAR(total / n, 4.0, 3.0 * 4.47 / std::sqrt(n));
  EXPECT_EQ(s.geometric(1.0), 0u);
}

TEST(Stream, ShuffleIsReproducible) {
  std::vector<int> a(20), b(20);
  for (int k = 0; k < 20; ++k) a[k] = b[k] = k;
  Stream s1(4), s2(4);
  std::shuffle(a.begin(), a.end(), s1);
  std::shuffle(b.begin(), b.end(), s2);
  EXPECT_EQ(a, b);
}
