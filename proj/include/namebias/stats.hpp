#pragma once

// Significance tests used by the effect reports.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "namebias/common.hpp"

namespace namebias {

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  // Zero variance on both sides; p is a convention (1 for equal means, 0 otherwise).
  bool degenerate = false;
};

struct Correlation {
  double rho = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  // False when either series is constant and rho is undefined.
  bool defined = false;
};

namespace detail {

inline double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Unbiased sample variance, two-pass.
inline double sample_variance(std::span<const double> v, double m) {
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

inline double two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  boost::math::students_t_distribution<double> dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t))));
}

inline TTestResult degenerate_result(double diff) {
  TTestResult r;
  r.degenerate = true;
  if (diff == 0.0) return r;
  r.t = std::copysign(std::numeric_limits<double>::infinity(), diff);
  r.p = 0.0;
  return r;
}

}  // namespace detail

// Two-sample t-test with unequal variances; Welch–Satterthwaite degrees of
// freedom and a two-sided p-value. t > 0 when mean(xs) > mean(ys).
inline TTestResult welch_t_test(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() < 2 || ys.size() < 2) throw Error("welch_t_test: each series needs at least 2 values");
  const double mx = detail::mean(xs), my = detail::mean(ys);
  const double vx = detail::sample_variance(xs, mx) / static_cast<double>(xs.size());
  const double vy = detail::sample_variance(ys, my) / static_cast<double>(ys.size());
  const double se2 = vx + vy;
  if (se2 == 0.0) return detail::degenerate_result(mx - my);
  TTestResult r;
  r.t = (mx - my) / std::sqrt(se2);
  r.df = se2 * se2 / (vx * vx / static_cast<double>(xs.size() - 1) + vy * vy / static_cast<double>(ys.size() - 1));
  r.p = detail::two_sided_p(r.t, r.df);
  return r;
}

// Paired t-test on xs[i] - ys[i].
inline TTestResult paired_t_test(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error("paired_t_test: series differ in length");
  if (xs.size() < 2) throw Error("paired_t_test: need at least 2 pairs");
  std::vector<double> d(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) d[i] = xs[i] - ys[i];
  const double m = detail::mean(d);
  const double se2 = detail::sample_variance(d, m) / static_cast<double>(d.size());
  if (se2 == 0.0) return detail::degenerate_result(m);
  TTestResult r;
  r.t = m / std::sqrt(se2);
  r.df = static_cast<double>(d.size() - 1);
  r.p = detail::two_sided_p(r.t, r.df);
  return r;
}

// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline Correlation spearman_corr(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error("spearman_corr: series differ in length");
  if (xs.size() < 3) throw Error("spearman_corr: need at least 3 pairs");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double mx = detail::mean(rx), my = detail::mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  Correlation c;
  if (sxx == 0.0 || syy == 0.0) return c;
  c.defined = true;
  c.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double n = static_cast<double>(xs.size());
  if (std::fabs(c.rho) == 1.0) {
    c.p = 0.0;
  } else {
    const double t = c.rho * std::sqrt((n - 2.0) / ((1.0 - c.rho) * (1.0 + c.rho)));
    c.p = detail::two_sided_p(t, n - 2.0);
  }
  return c;
}

// "***" for p <= .001, "**" for p <= .01, "*" for p <= .05.
inline std::string significance_stars(double p) {
  if (!(p <= 0.05)) return "";
  if (p <= 0.001) return "***";
  if (p <= 0.01) return "**";
  return "*";
}

}  // namespace namebias
