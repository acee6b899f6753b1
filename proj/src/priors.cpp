#include "crb/priors.hpp"

#include <cmath>
#include <string>

#include "crb/error.hpp"
#include "crb/math.hpp"

namespace crb {

using math::kInf;

void PriorConfig::validate() const {
  for (const auto* t : {&threshold, &intercept, &sd, &aux_scalar}) {
    if (!(t->df > 0.0)) throw ConfigError("prior: Student-t df must be positive");
    if (!(t->scale > 0.0)) throw ConfigError("prior: Student-t scale must be positive");
  }
  if (!(horseshoe_global_scale > 0.0) || !(horseshoe_local_scale > 0.0))
    throw ConfigError("prior: horseshoe scales must be positive");
  if (!(lkj_eta > 0.0)) throw ConfigError("prior: lkj_eta must be positive");
}

ScalarDensity normal_lpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return {-math::kHalfLog2Pi - std::log(sd) - 0.5 * z * z, -z / sd};
}

ScalarDensity student_t_lpdf(double x, const StudentT& t) {
  const double nu = t.df;
  const double z = (x - t.loc) / t.scale;
  const double value = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * (std::log(nu) + math::kLogPi) -
                       std::log(t.scale) - 0.5 * (nu + 1.0) * std::log1p(z * z / nu);
  const double dx = -(nu + 1.0) * z / (t.scale * (nu + z * z));
  return {value, dx};
}

ScalarDensity half_student_t_lpdf(double x, const StudentT& t) {
  if (x < 0.0) return {-kInf, 0.0};
  auto r = student_t_lpdf(x, t);
  r.value += math::kLogTwo;
  return r;
}

ScalarDensity half_cauchy_lpdf(double x, double scale) {
  if (x < 0.0) return {-kInf, 0.0};
  const double z = x / scale;
  return {math::kLogTwo - math::kLogPi - std::log(scale) - std::log1p(z * z), -2.0 * x / (scale * scale + x * x)};
}

HorseshoeDensity horseshoe_log_density(const Eigen::VectorXd& beta, const HorseshoeState& hs, double global_scale,
                                       double local_scale) {
  if (hs.lambda.size() != beta.size()) throw std::logic_error("horseshoe: lambda/beta length mismatch");
  if (!(hs.tau > 0.0) || (hs.lambda.size() > 0 && !(hs.lambda.minCoeff() > 0.0)))
    throw std::logic_error("horseshoe: non-positive scale");
  HorseshoeDensity out;
  out.d_beta.resize(beta.size());
  out.d_lambda.resize(beta.size());
  const auto tau_prior = half_cauchy_lpdf(hs.tau, global_scale);
  out.value = tau_prior.value;
  out.d_tau = tau_prior.dx;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double sd = hs.lambda(j) * hs.tau;
    const auto nb = normal_lpdf(beta(j), 0.0, sd);
    const double d_sd = -1.0 / sd + beta(j) * beta(j) / (sd * sd * sd);
    const auto lp = half_cauchy_lpdf(hs.lambda(j), local_scale);
    out.value += nb.value + lp.value;
    out.d_beta(j) = nb.dx;
    out.d_lambda(j) = d_sd * hs.tau + lp.dx;
    out.d_tau += d_sd * hs.lambda(j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// LKJ on Cholesky factors
// ---------------------------------------------------------------------------

namespace {

// Exponent and log normaliser for row i (0-based, i >= 1) of a k x k factor:
// the row's off-diagonal vector w has density (1 - |w|^2)^a / Z on the unit ball.
struct RowTerms {
  double a;
  double log_z;
};

RowTerms lkj_row_terms(int i, int k, double eta) {
  const double a = eta - 1.0 + 0.5 * (k - 1 - i);
  const double m = static_cast<double>(i);
  return {a, 0.5 * m * math::kLogPi + std::lgamma(a + 1.0) - std::lgamma(a + 1.0 + 0.5 * m)};
}

// Forward-mode dual number with a dynamic number of directions.
struct Dual {
  double v = 0.0;
  Eigen::VectorXd d;
};

Dual constant(double v, Eigen::Index n) { return {v, Eigen::VectorXd::Zero(n)}; }
Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + b.d * a.v}; }
Dual operator*(double s, const Dual& a) { return {s * a.v, s * a.d}; }
Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
Dual dsqrt(const Dual& a) {
  const double s = std::sqrt(a.v);
  return {s, a.d * (0.5 / s)};
}
Dual dlog(const Dual& a) { return {std::log(a.v), a.d / a.v}; }

}  // namespace

double lkj_cholesky_log_density(const Eigen::MatrixXd& L, double eta) {
  const auto k = static_cast<int>(L.rows());
  if (L.cols() != k) throw DomainError("lkj: factor must be square");
  if (!(eta > 0.0)) throw DomainError("lkj: eta must be positive");
  double lp = 0.0;
  for (int i = 0; i < k; ++i) {
    if (!(L(i, i) > 0.0)) throw DomainError("lkj: factor diagonal must be positive");
    if (std::abs(L.row(i).head(i + 1).squaredNorm() - 1.0) > 1e-8) throw DomainError("lkj: factor rows must have unit norm");
    for (int j = i + 1; j < k; ++j)
      if (L(i, j) != 0.0) throw DomainError("lkj: factor must be lower triangular");
    if (i == 0) continue;
    const auto t = lkj_row_terms(i, k, eta);
    lp += t.a * std::log(L(i, i) * L(i, i)) - t.log_z;
  }
  return lp;
}

CorrCholesky corr_cholesky_transform(std::span<const double> y, int k, double lkj_eta) {
  const auto n = static_cast<Eigen::Index>(k * (k - 1) / 2);
  if (static_cast<Eigen::Index>(y.size()) != n)
    throw std::logic_error("corr_cholesky_transform: expected " + std::to_string(n) + " entries");
  CorrCholesky out;
  std::vector<Dual> L(static_cast<std::size_t>(k * k), constant(0.0, n));
  auto at = [&](int i, int j) -> Dual& { return L[static_cast<std::size_t>(i * k + j)]; };
  Dual log_jac = constant(0.0, n);
  Dual log_prior = constant(0.0, n);
  at(0, 0) = constant(1.0, n);
  Eigen::Index q = 0;
  for (int i = 1; i < k; ++i) {
    Dual sum_sq = constant(0.0, n);
    for (int j = 0; j < i; ++j, ++q) {
      const double yq = y[static_cast<std::size_t>(q)];
      Dual z{std::tanh(yq), Eigen::VectorXd::Zero(n)};
      // d tanh = sech^2; log sech^2(y) = 2 (log 2 - |y| - log1p(exp(-2|y|)))
      const double log_sech2 = 2.0 * (math::kLogTwo - std::abs(yq) - std::log1p(std::exp(-2.0 * std::abs(yq))));
      z.d(q) = std::exp(log_sech2);
      log_jac.v += log_sech2;
      log_jac.d(q) += -2.0 * z.v;  // d/dy log sech^2(y) = -2 tanh(y)
      if (j == 0) {
        at(i, j) = z;
      } else {
        const Dual rem = constant(1.0, n) - sum_sq;
        at(i, j) = z * dsqrt(rem);
        log_jac = log_jac + 0.5 * dlog(rem);
      }
      sum_sq = sum_sq + at(i, j) * at(i, j);
    }
    const Dual diag_sq = constant(1.0, n) - sum_sq;
    at(i, i) = dsqrt(diag_sq);
    const auto t = lkj_row_terms(i, k, lkj_eta);
    log_prior = log_prior + t.a * dlog(diag_sq);
    log_prior.v -= t.log_z;
  }
  out.L = Eigen::MatrixXd::Zero(k, k);
  out.dL.assign(static_cast<std::size_t>(n), Eigen::MatrixXd::Zero(k, k));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j <= i; ++j) {
      out.L(i, j) = at(i, j).v;
      for (Eigen::Index r = 0; r < n; ++r) out.dL[static_cast<std::size_t>(r)](i, j) = at(i, j).d(r);
    }
  out.log_jacobian = log_jac.v;
  out.log_prior = log_prior.v;
  out.d_log_prior_jacobian = log_jac.d + log_prior.d;
  return out;
}

std::vector<double> corr_cholesky_unconstrain(const Eigen::MatrixXd& L) {
  const auto k = static_cast<int>(L.rows());
  std::vector<double> y;
  for (int i = 1; i < k; ++i) {
    double sum_sq = 0.0;
    for (int j = 0; j < i; ++j) {
      const double z = j == 0 ? L(i, 0) : L(i, j) / std::sqrt(1.0 - sum_sq);
      y.push_back(std::atanh(z));
      sum_sq += L(i, j) * L(i, j);
    }
  }
  return y;
}

}  // namespace crb
