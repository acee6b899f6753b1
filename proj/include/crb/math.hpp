#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace crb::math {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLogPi = 1.1447298858494002;
inline constexpr double kLogTwo = 0.6931471805599453;
inline constexpr double kHalfLog2Pi = 0.9189385332046728;

// log(1 / (1 + exp(-x))), exact for |x| up to the double range.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// log(1 - exp(x)) for x <= 0.
inline double log1m_exp(double x) {
  if (x > -kLogTwo) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

inline double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

inline double log_sum_exp(std::span<const double> x) {
  double m = -kInf;
  for (double v : x) m = v > m ? v : m;
  if (m == -kInf) return m;
  if (m == kInf) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline double log_choose(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Linear-interpolation sample quantile (type 7) of an already sorted sample.
inline double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::vector<double> x, double q);
double mean(std::span<const double> x);
// Unbiased (n - 1) sample variance.
double variance(std::span<const double> x);

}  // namespace crb::math
