#include "crb/math.hpp"

#include <algorithm>
#include <numeric>

namespace crb::math {

double quantile(std::vector<double> x, double q) {
  std::sort(x.begin(), x.end());
  return sorted_quantile(x, q);
}

double mean(std::span<const double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

}  // namespace crb::math
