#ifndef TTA_STATS_HPP
#define TTA_STATS_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

namespace tta {

struct Correlation {
  double r = 0;
  double p_value = 1;  // two-sided, t test with n - 2 degrees of freedom
};

inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 3) throw std::invalid_argument("pearson: need at least three points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return {0.0, 1.0};
  Correlation c;
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(n) - 2;
  if (std::abs(c.r) >= 1.0) {
    c.p_value = 0.0;
    return c;
  }
  const double t = c.r * std::sqrt(df / (1 - c.r * c.r));
  c.p_value = 2 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), std::abs(t)));
  return c;
}

struct MeanStd {
  double mean = 0;
  double stddev = 0;  // sample standard deviation (n - 1)
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return m;
  double ss = 0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return m;
}

}  // namespace tta

#endif  // TTA_STATS_HPP
