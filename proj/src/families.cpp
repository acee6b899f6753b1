#include "crb/families.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <boost/math/special_functions/beta.hpp>

#include "crb/error.hpp"
#include "crb/math.hpp"

namespace crb {

using math::kInf;

IntervalLength::IntervalLength(int days) : days_(days) {
  if (days < 1) throw DomainError("interval length must be >= 1, got " + std::to_string(days));
}

std::string_view family_name(Family f) {
  switch (f) {
    case Family::CRatio: return "cratio";
    case Family::HurdleNB: return "hurdle_nb";
    case Family::Binomial: return "binomial";
    case Family::BetaBinomial: return "beta_binomial";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "cratio" || s == "c_ratio") return Family::CRatio;
  if (s == "hurdle_nb" || s == "hurdle_negbinomial") return Family::HurdleNB;
  if (s == "binomial") return Family::Binomial;
  if (s == "beta_binomial" || s == "beta_bin") return Family::BetaBinomial;
  throw ConfigError("unknown family '" + std::string(name) +
                    "' (expected cratio, hurdle_nb, binomial or beta_binomial)");
}

bool family_bounded(Family f) { return f != Family::HurdleNB; }

Family family_of(const FamilyParams& p) {
  return std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CRatioParams>) return Family::CRatio;
        else if constexpr (std::is_same_v<T, HurdleNBParams>) return Family::HurdleNB;
        else if constexpr (std::is_same_v<T, BinomialParams>) return Family::Binomial;
        else return Family::BetaBinomial;
      },
      p);
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

namespace {

bool open_unit(double p) { return std::isfinite(p) && p > 0.0 && p < 1.0; }
bool positive(double x) { return std::isfinite(x) && x > 0.0; }

void check_count(int d, IntervalLength n) {
  if (!n.contains(d))
    throw DomainError("count " + std::to_string(d) + " outside support 0.." + std::to_string(n.days()));
}

void check(const CRatioParams& p, IntervalLength n) {
  if (!std::isfinite(p.eta)) throw DomainError("cratio: non-finite eta");
  if (static_cast<int>(p.thresholds.size()) != n.days())
    throw DomainError("cratio: expected " + std::to_string(n.days()) + " thresholds, got " +
                      std::to_string(p.thresholds.size()));
  for (double t : p.thresholds)
    if (!std::isfinite(t)) throw DomainError("cratio: non-finite threshold");
}

void check(const HurdleNBParams& p) {
  if (!open_unit(p.psi)) throw DomainError("hurdle_nb: psi must lie in (0,1)");
  if (!positive(p.mu)) throw DomainError("hurdle_nb: mu must be positive");
  if (!positive(p.alpha)) throw DomainError("hurdle_nb: alpha must be positive");
}

void check(const BinomialParams& p) {
  if (!open_unit(p.pi)) throw DomainError("binomial: pi must lie in (0,1)");
}

void check(const BetaBinParams& p) {
  if (!open_unit(p.pi)) throw DomainError("beta_binomial: pi must lie in (0,1)");
  if (!positive(p.phi)) throw DomainError("beta_binomial: phi must be positive");
  if (!(p.pi / p.phi > 0.0) || !((1.0 - p.pi) / p.phi > 0.0))
    throw DomainError("beta_binomial: Beta shapes underflow");
}

}  // namespace

void validate(const FamilyParams& p, IntervalLength n) {
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CRatioParams>) check(v, n);
        else check(v);
      },
      p);
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

namespace kernel {

double cratio_log_pmf(double eta, std::span<const double> thresholds, int d) {
  double lp = 0.0;
  for (int r = 0; r < d; ++r) lp += math::log_sigmoid(eta - thresholds[r]);
  if (d < static_cast<int>(thresholds.size())) lp += math::log_sigmoid(thresholds[d] - eta);
  return lp;
}

double nb_log_p0(double mu, double alpha) { return -std::log1p(alpha * mu) / alpha; }

double nb_log_pmf(int d, double mu, double alpha) {
  const double r = 1.0 / alpha;
  const double u = alpha * mu;
  const double l1pu = std::log1p(u);
  double lp = -r * l1pu;
  if (d > 0) lp += std::lgamma(d + r) - std::lgamma(r) - std::lgamma(d + 1.0) + d * (std::log(u) - l1pu);
  return lp;
}

double hurdle_nb_log_pmf(int d, double psi, double mu, double alpha) {
  if (d == 0) return std::log(psi);
  return std::log1p(-psi) + nb_log_pmf(d, mu, alpha) - math::log1m_exp(nb_log_p0(mu, alpha));
}

double binomial_log_pmf(int d, int n, double pi) {
  double lp = math::log_choose(n, d);
  if (d > 0) lp += d * std::log(pi);
  if (n - d > 0) lp += (n - d) * std::log1p(-pi);
  return lp;
}

double beta_bin_log_pmf(int d, int n, double pi, double phi) {
  return beta_bin_log_pmf_shapes(d, n, pi / phi, (1.0 - pi) / phi);
}

// B(d + a, n - d + b) / B(a, b) as rising factorials, exact for integer counts
// and free of the lgamma cancellation at large shapes.
double beta_bin_log_pmf_shapes(int d, int n, double a, double b) {
  double lp = math::log_choose(n, d);
  for (int i = 0; i < d; ++i) lp += std::log(a + i);
  for (int i = 0; i < n - d; ++i) lp += std::log(b + i);
  const double ab = a + b;
  for (int i = 0; i < n; ++i) lp -= std::log(ab + i);
  return lp;
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// checked log pmfs
// ---------------------------------------------------------------------------

double cratio_log_pmf(const CRatioParams& p, int d, IntervalLength n) {
  check(p, n);
  check_count(d, n);
  return kernel::cratio_log_pmf(p.eta, p.thresholds, d);
}

double hurdle_nb_log_pmf(const HurdleNBParams& p, int d) {
  check(p);
  if (d < 0) throw DomainError("hurdle_nb: negative count " + std::to_string(d));
  return kernel::hurdle_nb_log_pmf(d, p.psi, p.mu, p.alpha);
}

double binomial_log_pmf(const BinomialParams& p, int d, IntervalLength n) {
  check(p);
  check_count(d, n);
  return kernel::binomial_log_pmf(d, n.days(), p.pi);
}

double beta_bin_log_pmf(const BetaBinParams& p, int d, IntervalLength n) {
  check(p);
  check_count(d, n);
  return kernel::beta_bin_log_pmf(d, n.days(), p.pi, p.phi);
}

double family_log_pmf(const FamilyParams& p, int d, IntervalLength n) {
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CRatioParams>) return cratio_log_pmf(v, d, n);
        else if constexpr (std::is_same_v<T, HurdleNBParams>) return hurdle_nb_log_pmf(v, d);
        else if constexpr (std::is_same_v<T, BinomialParams>) return binomial_log_pmf(v, d, n);
        else return beta_bin_log_pmf(v, d, n);
      },
      p);
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

namespace {

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// log of a Gamma(shape, 1) draw; stable for small shapes.
double log_gamma_draw(double shape, Rng& rng) {
  if (shape >= 1.0) return std::log(std::gamma_distribution<double>(shape, 1.0)(rng));
  const double g = std::gamma_distribution<double>(shape + 1.0, 1.0)(rng);
  return std::log(g) + std::log(uniform01(rng)) / shape;
}

}  // namespace

int cratio_sample(const CRatioParams& p, IntervalLength n, Rng& rng) {
  check(p, n);
  int d = 0;
  while (d < n.days() && uniform01(rng) < math::sigmoid(p.eta - p.thresholds[d])) ++d;
  return d;
}

int hurdle_nb_sample(const HurdleNBParams& p, Rng& rng) {
  check(p);
  if (uniform01(rng) < p.psi) return 0;
  // Inverse CDF of the zero-truncated NB by walking the pmf recursion.
  const double r = 1.0 / p.alpha;
  const double q = p.alpha * p.mu / (1.0 + p.alpha * p.mu);
  const double log_norm = math::log1m_exp(kernel::nb_log_p0(p.mu, p.alpha));
  double log_term = kernel::nb_log_pmf(1, p.mu, p.alpha) - log_norm;
  const double u = uniform01(rng);
  double cum = 0.0;
  int d = 1;
  for (; d < kHurdleMaxTerms; ++d) {
    cum += std::exp(log_term);
    if (u <= cum) break;
    log_term += std::log((d + r) / (d + 1.0) * q);
  }
  return d;
}

int binomial_sample(const BinomialParams& p, IntervalLength n, Rng& rng) {
  check(p);
  return std::binomial_distribution<int>(n.days(), p.pi)(rng);
}

int beta_bin_sample(const BetaBinParams& p, IntervalLength n, Rng& rng) {
  check(p);
  const double lx = log_gamma_draw(p.pi / p.phi, rng);
  const double ly = log_gamma_draw((1.0 - p.pi) / p.phi, rng);
  const double day_prob = math::sigmoid(lx - ly);
  if (day_prob <= 0.0) return 0;
  if (day_prob >= 1.0) return n.days();
  return std::binomial_distribution<int>(n.days(), day_prob)(rng);
}

int family_sample(const FamilyParams& p, IntervalLength n, Rng& rng) {
  return std::visit(
      [&](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CRatioParams>) return cratio_sample(v, n, rng);
        else if constexpr (std::is_same_v<T, HurdleNBParams>) return hurdle_nb_sample(v, rng);
        else if constexpr (std::is_same_v<T, BinomialParams>) return binomial_sample(v, n, rng);
        else return beta_bin_sample(v, n, rng);
      },
      p);
}

// ---------------------------------------------------------------------------
// pmf vectors and moments
// ---------------------------------------------------------------------------

namespace {

std::vector<double> hurdle_pmf(const HurdleNBParams& p) {
  const double r = 1.0 / p.alpha;
  const double prob = r / (r + p.mu);  // NB success probability
  const double log_norm = math::log1m_exp(kernel::nb_log_p0(p.mu, p.alpha));
  const double scale = (1.0 - p.psi) / std::exp(log_norm);
  std::vector<double> pmf{p.psi};
  double log_term = kernel::nb_log_pmf(1, p.mu, p.alpha);
  const double q = 1.0 - prob;
  for (int d = 1; d < kHurdleMaxTerms; ++d) {
    pmf.push_back(std::exp(log_term + std::log1p(-p.psi) - log_norm));
    // Tail P(NB > d) = I_{1-prob}(d+1, r); check it every few terms.
    if (d % 8 == 0 || pmf.back() < 1e-14) {
      const double tail = scale * boost::math::ibeta(d + 1.0, r, q);
      if (tail < kHurdleTailMass) break;
    }
    log_term += std::log((d + r) / (d + 1.0) * q);
  }
  return pmf;
}

}  // namespace

std::vector<double> family_pmf(const FamilyParams& p, IntervalLength n) {
  validate(p, n);
  if (const auto* h = std::get_if<HurdleNBParams>(&p)) return hurdle_pmf(*h);
  std::vector<double> pmf(static_cast<std::size_t>(n.days()) + 1);
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        for (int d = 0; d <= n.days(); ++d) {
          double lp = 0.0;
          if constexpr (std::is_same_v<T, CRatioParams>) lp = kernel::cratio_log_pmf(v.eta, v.thresholds, d);
          else if constexpr (std::is_same_v<T, BinomialParams>) lp = kernel::binomial_log_pmf(d, n.days(), v.pi);
          else if constexpr (std::is_same_v<T, BetaBinParams>) lp = kernel::beta_bin_log_pmf(d, n.days(), v.pi, v.phi);
          pmf[static_cast<std::size_t>(d)] = std::exp(lp);
        }
      },
      p);
  return pmf;
}

Moments family_mean_var(const FamilyParams& p, IntervalLength n) {
  const auto pmf = family_pmf(p, n);
  double m = 0.0;
  for (std::size_t d = 0; d < pmf.size(); ++d) m += static_cast<double>(d) * pmf[d];
  double v = 0.0;
  for (std::size_t d = 0; d < pmf.size(); ++d) {
    const double dev = static_cast<double>(d) - m;
    v += dev * dev * pmf[d];
  }
  return {m, v};
}

int pmf_quantile(std::span<const double> pmf, double q) {
  double cum = 0.0;
  for (std::size_t d = 0; d < pmf.size(); ++d) {
    cum += pmf[d];
    // Guard against the last few ulps of rounding in the cumulative sum.
    if (cum >= q - 1e-12) return static_cast<int>(d);
  }
  return static_cast<int>(pmf.size()) - 1;
}

}  // namespace crb
