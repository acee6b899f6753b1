#pragma once

// Response families for bounded day counts: continuation-ratio (sequential
// ordinal), hurdle negative binomial, binomial and beta-binomial.
//
// Every pmf is evaluated in log space. The hurdle-NB positive part is the
// zero-truncated negative binomial, and the beta-binomial mixes over a
// Beta(pi/phi, (1-pi)/phi) day-use probability with the mixing integrated
// out analytically.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace crb {

using Rng = std::mt19937_64;

// Bound N on the count support (28 for a four-week recall window).
class IntervalLength {
 public:
  explicit IntervalLength(int days);
  int days() const { return days_; }
  bool contains(int d) const { return d >= 0 && d <= days_; }

 private:
  int days_;
};

enum class Family { CRatio, HurdleNB, Binomial, BetaBinomial };

std::string_view family_name(Family f);
// Accepts "cratio", "hurdle_nb", "binomial", "beta_binomial" (case-insensitive).
Family parse_family(std::string_view name);
bool family_bounded(Family f);

// eta on the log-odds scale; thresholds[r-1] is theta_r, unconstrained.
struct CRatioParams {
  double eta = 0.0;
  std::vector<double> thresholds;
};

struct HurdleNBParams {
  double psi = 0.5;    // probability of a structural zero
  double mu = 1.0;     // mean of the untruncated NB
  double alpha = 1.0;  // overdispersion, Var = mu + alpha mu^2
};

struct BinomialParams {
  double pi = 0.5;
};

struct BetaBinParams {
  double pi = 0.5;
  double phi = 1.0;  // Beta shapes are pi/phi and (1-pi)/phi
};

using FamilyParams = std::variant<CRatioParams, HurdleNBParams, BinomialParams, BetaBinParams>;

Family family_of(const FamilyParams& p);

double cratio_log_pmf(const CRatioParams& p, int d, IntervalLength n);
double hurdle_nb_log_pmf(const HurdleNBParams& p, int d);
double binomial_log_pmf(const BinomialParams& p, int d, IntervalLength n);
double beta_bin_log_pmf(const BetaBinParams& p, int d, IntervalLength n);

// Unchecked kernels shared with the log-posterior hot loop.
namespace kernel {
double cratio_log_pmf(double eta, std::span<const double> thresholds, int d);
// log NB(d; mu, alpha) and log NB(0; mu, alpha) for the untruncated NB.
double nb_log_pmf(int d, double mu, double alpha);
double nb_log_p0(double mu, double alpha);
double hurdle_nb_log_pmf(int d, double psi, double mu, double alpha);
double beta_bin_log_pmf(int d, int n, double pi, double phi);
double beta_bin_log_pmf_shapes(int d, int n, double a, double b);
double binomial_log_pmf(int d, int n, double pi);
}  // namespace kernel

// Dispatches on the variant. n is ignored for the hurdle-NB.
double family_log_pmf(const FamilyParams& p, int d, IntervalLength n);

int cratio_sample(const CRatioParams& p, IntervalLength n, Rng& rng);
int hurdle_nb_sample(const HurdleNBParams& p, Rng& rng);
int binomial_sample(const BinomialParams& p, IntervalLength n, Rng& rng);
int beta_bin_sample(const BetaBinParams& p, IntervalLength n, Rng& rng);
int family_sample(const FamilyParams& p, IntervalLength n, Rng& rng);

// Tail-mass target and term cap for the hurdle-NB support truncation.
inline constexpr double kHurdleTailMass = 1e-12;
inline constexpr int kHurdleMaxTerms = 1'000'000;

// pmf over 0..n for bounded families; for the hurdle-NB over 0..D where the
// remaining tail mass is below kHurdleTailMass (or the cap is reached).
std::vector<double> family_pmf(const FamilyParams& p, IntervalLength n);

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

Moments family_mean_var(const FamilyParams& p, IntervalLength n);

// Smallest d with CDF(d) >= q on a pmf vector.
int pmf_quantile(std::span<const double> pmf, double q);

void validate(const FamilyParams& p, IntervalLength n);

}  // namespace crb
