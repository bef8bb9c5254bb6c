#pragma once

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/poisson.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "crnphase/error.hpp"

namespace crnphase {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  bool contains(double v) const { return lo <= v && v <= hi; }
};

/// Clopper-Pearson interval for k successes out of n. With k = 0 (or k = n)
/// the open side is one-sided at the full level.
inline Interval binomial_interval(std::int64_t k, std::int64_t n, double level = 0.95) {
  if (n <= 0 || k < 0 || k > n) throw Error(ErrorCode::invalid_argument, "binomial interval needs 0 <= k <= n, n > 0");
  using boost::math::binomial_distribution;
  const double alpha = 1.0 - level;
  const auto nd = static_cast<double>(n), kd = static_cast<double>(k);
  if (k == 0) return {0.0, binomial_distribution<>::find_upper_bound_on_p(nd, 0.0, alpha)};
  if (k == n) return {binomial_distribution<>::find_lower_bound_on_p(nd, nd, alpha), 1.0};
  return {binomial_distribution<>::find_lower_bound_on_p(nd, kd, alpha / 2.0),
          binomial_distribution<>::find_upper_bound_on_p(nd, kd, alpha / 2.0)};
}

/// P(N >= c) for N ~ Poisson(mean).
inline double poisson_tail(double mean, std::int64_t c) {
  if (c <= 0) return 1.0;
  if (mean <= 0.0) return 0.0;
  boost::math::poisson_distribution<> d(mean);
  return boost::math::cdf(boost::math::complement(d, static_cast<double>(c - 1)));
}

/// Survival function of the Kolmogorov distribution.
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16 * std::abs(sum)) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test (asymptotic p-value with the usual
/// small-sample correction). Conservative for discrete data.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::invalid_argument, "KS test needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)};
}

struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double std_error() const { return n > 0 ? std::sqrt(variance / static_cast<double>(n)) : 0.0; }
};

inline SampleStats sample_stats(std::span<const double> v) {
  SampleStats s;
  s.n = v.size();
  if (v.empty()) return s;
  double m = 0.0, m2 = 0.0;
  std::size_t k = 0;
  for (double x : v) {
    ++k;
    const double d = x - m;
    m += d / static_cast<double>(k);
    m2 += d * (x - m);
  }
  s.mean = m;
  s.variance = s.n > 1 ? m2 / static_cast<double>(s.n - 1) : 0.0;
  return s;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::vector<double> residuals;
};

/// Ordinary least squares y = slope * x + intercept.
inline LinearFit linear_regression(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw Error(ErrorCode::insufficient_points, "regression needs at least two paired points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorCode::insufficient_points, "regression abscissae are all equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.slope * x[i] + fit.intercept);
    fit.residuals.push_back(r);
    ssr += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ssr / syy : 1.0;
  return fit;
}

}  // namespace crnphase
