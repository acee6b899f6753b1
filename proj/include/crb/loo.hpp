#pragma once

// Pareto-smoothed importance-sampling leave-one-out cross-validation.
//
// Per observation, the raw log importance ratios -log p(y_i | theta_s) have
// their largest M = ceil(min(0.2 S, 3 sqrt(S / r_eff))) values replaced by
// expected order statistics of a generalized Pareto fit, are truncated at the
// raw maximum, and are self-normalized. r_eff is the relative efficiency of
// exp(log-lik) computed over chains.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "crb/model.hpp"
#include "crb/sampler.hpp"

namespace crb {

struct PointwiseLogLik {
  Eigen::MatrixXd ll;  // draws x observations
  std::vector<int> chain_id;
};

// Throws DataError naming the row for an out-of-support response.
PointwiseLogLik pointwise_loglik(const PosteriorDraws& fit, const ModelSpec& model, const ModelData& data);

struct GpdFit {
  double k = 0.0;
  double sigma = 0.0;
};

// Zhang-Stephens profile-posterior fit to positive exceedances sorted
// ascending, with the weakly informative shrinkage of k toward 0.5.
GpdFit gpd_fit(std::span<const double> sorted_exceedances);
double gpd_quantile(double p, double k, double sigma);

enum class ParetoK { Good, Ok, Bad, Undefined };
ParetoK classify_k(double k);
std::string_view pareto_k_label(ParetoK k);

struct PsisWeights {
  std::vector<double> log_weights;  // normalized
  double k = 0.0;                   // NaN when undefined
};

PsisWeights psis(std::vector<double> log_ratios, double r_eff);

struct LooResult {
  double elpd_loo = 0.0;
  double se_elpd_loo = 0.0;
  double p_loo = 0.0;
  double se_p_loo = 0.0;
  double looic = 0.0;
  double se_looic = 0.0;
  double lpd = 0.0;
  std::vector<double> pointwise_elpd;
  std::vector<double> pointwise_p_loo;
  std::vector<double> pareto_k;
  std::vector<ParetoK> k_class;
  std::vector<double> r_eff;
  int n_draws = 0;
  bool few_draws = false;  // fewer than 100 draws
  std::uint64_t fingerprint = 0;

  int n_obs() const { return static_cast<int>(pointwise_elpd.size()); }
  int count(ParetoK c) const;
};

// chain_id may be empty, in which case r_eff is taken as 1.
LooResult psis_loo(const Eigen::MatrixXd& ll, const std::vector<int>& chain_id);
LooResult psis_loo(const PointwiseLogLik& ll);

struct CompareRow {
  std::string model;
  LooResult loo;
  double elpd_diff = 0.0;  // relative to the best (first) row, <= 0
  double se_diff = 0.0;
};

// Sorted ascending by LOO-IC. Throws DataError when the results were computed
// on different observation sets.
std::vector<CompareRow> compare(const std::vector<std::pair<std::string, LooResult>>& results);

}  // namespace crb
