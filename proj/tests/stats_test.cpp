#include <cmath>

#include <gtest/gtest.h>

#include "namebias/stats.hpp"
#include "oracle_cases.hpp"

using namespace namebias;

TEST(Welch, MatchesOracle) {
  const auto& cases = testing_support::welch_cases();
  ASSERT_GE(cases.size(), 10u);
  for (const auto& c : cases) {
    const auto r = welch_t_test(c.xs, c.ys);
    EXPECT_NEAR(r.t, c.stat, 1e-9);
    EXPECT_NEAR(r.p, c.p, 1e-9);
  }
}

TEST(Welch, IdenticalSeries) {
  const std::vector<double> xs = {1, 4, 2, 8};
  const auto r = welch_t_test(xs, xs);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p, 1.0);
}

TEST(Welch, ConstantSeries) {
  const std::vector<double> a = {2, 2, 2}, b = {2, 2, 2, 2}, c = {3, 3, 3};
  const auto same = welch_t_test(a, b);
  EXPECT_EQ(same.p, 1.0);
  EXPECT_TRUE(same.degenerate);
  const auto differ = welch_t_test(a, c);
  EXPECT_EQ(differ.p, 0.0);
  EXPECT_TRUE(differ.degenerate);
}

TEST(Welch, TooShort) {
  const std::vector<double> one = {1.0}, two = {1.0, 2.0};
  EXPECT_THROW(welch_t_test(one, two), Error);
}

TEST(Welch, AgreesWithPermutationTest) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto [xs, ys] = testing_support::shifted_normals(seed, 0.8);
    const double p = welch_t_test(xs, ys).p;
    EXPECT_NEAR(p, testing_support::permutation_p(xs, ys, 1000, 100 + seed), 0.02) << "seed " << seed;
  }
}

TEST(Paired, KnownDifferences) {
  // Differences 1, 2, 3: mean 2, sd 1, t = 2 sqrt(3).
  const std::vector<double> xs = {2, 4, 6}, ys = {1, 2, 3};
  const auto r = paired_t_test(xs, ys);
  EXPECT_NEAR(r.t, 2.0 * std::sqrt(3.0), 1e-12);
  EXPECT_EQ(r.df, 2.0);
  EXPECT_GT(r.p, 0.0);
  EXPECT_LT(r.p, 0.1);
  const std::vector<double> shorter = {1, 2};
  EXPECT_THROW(paired_t_test(xs, shorter), Error);
}

TEST(Spearman, MatchesOracle) {
  const auto& cases = testing_support::spearman_cases();
  ASSERT_GE(cases.size(), 10u);
  for (const auto& c : cases) {
    const auto r = spearman_corr(c.xs, c.ys);
    ASSERT_TRUE(r.defined);
    EXPECT_NEAR(r.rho, c.stat, 1e-9);
    EXPECT_NEAR(r.p, c.p, 1e-9);
  }
}

TEST(Spearman, MonotoneExtremes) {
  const std::vector<double> xs = {1, 2, 3, 4, 5}, up = {2, 4, 8, 16, 32}, down = {9, 7, 5, 3, 1};
  EXPECT_DOUBLE_EQ(spearman_corr(xs, up).rho, 1.0);
  EXPECT_DOUBLE_EQ(spearman_corr(xs, down).rho, -1.0);
}

TEST(Spearman, ConstantSeriesUndefined) {
  const std::vector<double> xs = {1, 2, 3}, flat = {4, 4, 4};
  const auto r = spearman_corr(xs, flat);
  EXPECT_FALSE(r.defined);
  EXPECT_TRUE(std::isnan(r.rho));
  const std::vector<double> shorter = {1, 2};
  EXPECT_THROW(spearman_corr(xs, shorter), Error);
}

TEST(Stars, Thresholds) {
  EXPECT_EQ(significance_stars(0.0003), "***");
  EXPECT_EQ(significance_stars(0.001), "***");
  EXPECT_EQ(significance_stars(0.005), "**");
  EXPECT_EQ(significance_stars(0.01), "**");
  EXPECT_EQ(significance_stars(0.03), "*");
  EXPECT_EQ(significance_stars(0.05), "*");
  EXPECT_EQ(significance_stars(0.0501), "");
  EXPECT_EQ(significance_stars(0.956), "");
  EXPECT_EQ(significance_stars(std::nan("")), "");
}
