#pragma once

// Independent reference computations used only by tests. None of these share
// code paths with the library implementations they check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace test {

// Enumerate all 2^n outcome vectors of n independent "progress" Bernoullis
// with success probability exp(eta - t)/(1 + exp(eta - t)). The count is the
// number of leading successes.
inline std::vector<double> enumerate_sequential(double eta, const std::vector<double>& thresholds) {
  const auto n = thresholds.size();
  std::vector<double> p(n);
  for (std::size_t r = 0; r < n; ++r) p[r] = std::exp(eta - thresholds[r]) / (1.0 + std::exp(eta - thresholds[r]));
  std::vector<double> pmf(n + 1, 0.0);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double prob = 1.0;
    std::size_t lead = 0;
    bool stopped = false;
    for (std::size_t r = 0; r < n; ++r) {
      const bool pass = (mask >> r) & 1U;
      prob *= pass ? p[r] : 1.0 - p[r];
      if (!stopped && pass) ++lead;
      else stopped = true;
    }
    pmf[lead] += prob;
  }
  return pmf;
}

// Raw (untruncated) NB pmf by a direct linear-space product
// C(d + r - 1, d) (1/(1+am))^r (am/(1+am))^d, r = 1/a.
inline std::vector<double> nb_pmf_direct(double mu, double alpha, int max_d) {
  const double r = 1.0 / alpha;
  const double p = 1.0 / (1.0 + alpha * mu);
  const double q = alpha * mu / (1.0 + alpha * mu);
  std::vector<double> out(static_cast<std::size_t>(max_d) + 1);
  double coef = 1.0;  // Gamma(d + r) / (Gamma(r) d!)
  for (int d = 0; d <= max_d; ++d) {
    if (d > 0) coef *= (d - 1 + r) / d;
    out[static_cast<std::size_t>(d)] = coef * std::pow(p, r) * std::pow(q, d);
  }
  return out;
}

// Relative frequencies of Binomial(n, u) with u ~ Beta(a, b), simulated.
inline std::vector<double> beta_binomial_mc(double a, double b, int n, int draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  std::vector<double> freq(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = 0; i < draws; ++i) {
    const double x = ga(rng);
    const double y = gb(rng);
    const double u = x / (x + y);
    freq[static_cast<std::size_t>(std::binomial_distribution<int>(n, u)(rng))] += 1.0;
  }
  for (auto& f : freq) f /= draws;
  return freq;
}

// Central finite-difference gradient.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Five-point central stencil, truncation error O(h^4).
inline std::vector<double> fd_gradient5(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-3) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    auto at = [&](double s) {
      x[i] = xi + s * h;
      return f(x);
    };
    g[i] = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
    x[i] = xi;
  }
  return g;
}

// Adaptive Simpson quadrature on [a, b].
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol, int depth = 50) {
  const std::function<double(double, double, double, double, double, double, int)> rec =
      [&](double lo, double hi, double flo, double fmid, double fhi, double whole, int d) {
        const double mid = 0.5 * (lo + hi);
        const double lm = 0.5 * (lo + mid);
        const double rm = 0.5 * (mid + hi);
        const double flm = f(lm);
        const double frm = f(rm);
        const double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
        const double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
        if (d <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
        return rec(lo, mid, flo, flm, fmid, left, d - 1) + rec(mid, hi, fmid, frm, fhi, right, d - 1);
      };
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  return rec(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), depth);
}

}  // namespace test
