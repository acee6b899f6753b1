#pragma once

// Prior log densities with gradients: horseshoe on population-level
// coefficients, Student-t on thresholds/intercepts, half Student-t on scales
// and LKJ on random-effect correlation Cholesky factors.

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace crb {

struct StudentT {
  double df = 3.0;
  double loc = 0.0;
  double scale = 2.5;
};

struct PriorConfig {
  StudentT threshold{3.0, 0.0, 2.5};
  StudentT intercept{3.0, 0.0, 2.5};
  StudentT sd{3.0, 0.0, 2.5};        // half Student-t on random-effect SDs
  StudentT aux_scalar{3.0, 0.0, 2.5};  // half Student-t on alpha / phi when not regressed
  double horseshoe_global_scale = 1.0;  // tau ~ half-Cauchy(0, this)
  double horseshoe_local_scale = 1.0;   // lambda_j ~ half-Cauchy(0, this)
  double lkj_eta = 1.0;

  void validate() const;
};

// Value and derivative with respect to x.
struct ScalarDensity {
  double value = 0.0;
  double dx = 0.0;
};

ScalarDensity normal_lpdf(double x, double mean, double sd);
ScalarDensity student_t_lpdf(double x, const StudentT& t);
// Restricted to x >= 0; -inf below.
ScalarDensity half_student_t_lpdf(double x, const StudentT& t);
ScalarDensity half_cauchy_lpdf(double x, double scale);

// Centered horseshoe: beta_j ~ Normal(0, lambda_j tau), lambda_j ~ C+(0, 1),
// tau ~ C+(0, global_scale). Densities are on the natural scale; the log
// Jacobian of any log-scale parameterisation belongs to the caller.
struct HorseshoeState {
  Eigen::VectorXd lambda;
  double tau = 1.0;
};

struct HorseshoeDensity {
  double value = 0.0;
  Eigen::VectorXd d_beta;
  Eigen::VectorXd d_lambda;
  double d_tau = 0.0;
};

HorseshoeDensity horseshoe_log_density(const Eigen::VectorXd& beta, const HorseshoeState& hs,
                                       double global_scale = 1.0, double local_scale = 1.0);

// LKJ(eta) density of a correlation matrix expressed on its Cholesky factor,
// as a density over the strictly lower-triangular entries (row-wise ball
// coordinates). Normalised: integrates to 1. Throws DomainError for an
// invalid factor.
double lkj_cholesky_log_density(const Eigen::MatrixXd& corr_chol, double eta);

// Unconstrained R^{k(k-1)/2} -> Cholesky factor of a k x k correlation matrix
// via tanh canonical partial correlations (row-major over the strict lower
// triangle).
struct CorrCholesky {
  Eigen::MatrixXd L;
  double log_jacobian = 0.0;
  double log_prior = 0.0;                 // lkj_cholesky_log_density(L, eta)
  Eigen::VectorXd d_log_prior_jacobian;  // gradient of log_prior + log_jacobian
  std::vector<Eigen::MatrixXd> dL;        // dL / dy_q for each unconstrained entry
};

CorrCholesky corr_cholesky_transform(std::span<const double> y, int k, double lkj_eta);

// Inverse transform (for initialisation / tests).
std::vector<double> corr_cholesky_unconstrain(const Eigen::MatrixXd& L);

}  // namespace crb
