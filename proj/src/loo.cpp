#include "crb/loo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "crb/diagnostics.hpp"
#include "crb/error.hpp"
#include "crb/math.hpp"

namespace crb {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> row_vector(const PosteriorDraws& fit, Eigen::Index r) {
  std::vector<double> v(static_cast<std::size_t>(fit.dim()));
  for (Eigen::Index j = 0; j < fit.dim(); ++j) v[static_cast<std::size_t>(j)] = fit.draws(r, j);
  return v;
}

double se_of(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  return std::sqrt(static_cast<double>(x.size()) * math::variance(x));
}

}  // namespace

PointwiseLogLik pointwise_loglik(const PosteriorDraws& fit, const ModelSpec& model, const ModelData& data) {
  const auto n = static_cast<Eigen::Index>(data.n_obs());
  PointwiseLogLik out;
  out.ll.resize(fit.n_draws(), n);
  out.chain_id = fit.chain_id;
  for (Eigen::Index r = 0; r < fit.n_draws(); ++r) {
    const auto theta = row_vector(fit, r);
    const auto params = observation_params(model, constrain(theta, model), data);
    for (Eigen::Index i = 0; i < n; ++i) {
      try {
        out.ll(r, i) = family_log_pmf(params[static_cast<std::size_t>(i)], data.days[static_cast<std::size_t>(i)],
                                      model.n_days);
      } catch (const DomainError& e) {
        throw DataError("row " + std::to_string(i + 1) + ": " + e.what());
      }
    }
  }
  return out;
}

GpdFit gpd_fit(std::span<const double> x) {
  const auto n = x.size();
  if (n == 0) return {kNaN, kNaN};
  constexpr double prior = 3.0;
  const std::size_t m = 30 + static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const double xstar = x[static_cast<std::size_t>(std::floor(static_cast<double>(n) / 4.0 + 0.5)) - 1];
  std::vector<double> theta(m), l_theta(m);
  for (std::size_t j = 0; j < m; ++j) {
    theta[j] = 1.0 / x[n - 1] + (1.0 - std::sqrt(static_cast<double>(m) / (static_cast<double>(j + 1) - 0.5))) / prior / xstar;
    // Profile log-likelihood of theta.
    const double a = -theta[j];
    double kk = 0.0;
    for (double v : x) kk += std::log1p(a * v);
    kk /= static_cast<double>(n);
    l_theta[j] = static_cast<double>(n) * (std::log(a / kk) - kk - 1.0);
  }
  const double lse = math::log_sum_exp(l_theta);
  double theta_hat = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double w = std::exp(l_theta[j] - lse);
    if (std::isfinite(w)) theta_hat += theta[j] * w;
  }
  double k = 0.0;
  for (double v : x) k += std::log1p(-theta_hat * v);
  k /= static_cast<double>(n);
  const double sigma = -k / theta_hat;
  // Ties at the cutoff can leave zero excesses that collapse the theta grid.
  if (!(sigma > 0.0) || !std::isfinite(sigma) || std::isnan(k)) return {math::kInf, kNaN};
  // Weakly informative prior: shrink toward 0.5 with weight 10 pseudo-observations.
  const double nd = static_cast<double>(n);
  k = k * nd / (nd + 10.0) + 10.0 * 0.5 / (nd + 10.0);
  return {k, sigma};
}

double gpd_quantile(double p, double k, double sigma) {
  if (!(sigma > 0.0)) return kNaN;
  if (k == 0.0) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

ParetoK classify_k(double k) {
  if (!std::isfinite(k)) return ParetoK::Undefined;
  if (k < 0.5) return ParetoK::Good;
  if (k < 0.7) return ParetoK::Ok;
  return ParetoK::Bad;
}

std::string_view pareto_k_label(ParetoK k) {
  switch (k) {
    case ParetoK::Good: return "good";
    case ParetoK::Ok: return "ok";
    case ParetoK::Bad: return "bad";
    case ParetoK::Undefined: return "undefined";
  }
  return "undefined";
}

PsisWeights psis(std::vector<double> lw, double r_eff) {
  const std::size_t s = lw.size();
  PsisWeights out;
  out.k = kNaN;
  const double mx = *std::max_element(lw.begin(), lw.end());
  for (auto& v : lw) v -= mx;
  const double sd = static_cast<double>(s);
  const auto tail_len = static_cast<std::size_t>(std::ceil(std::min(0.2 * sd, 3.0 * std::sqrt(sd / r_eff))));
  if (tail_len >= 5 && tail_len < s) {
    std::vector<std::size_t> order(s);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lw[a] < lw[b]; });
    const std::size_t first = s - tail_len;
    const double cutoff = lw[order[first - 1]];
    const double tail_min = lw[order[first]];
    const double tail_max = lw[order[s - 1]];
    if (std::abs(tail_max - tail_min) > std::numeric_limits<double>::epsilon() / 100.0) {
      const double exp_cut = std::exp(cutoff);
      std::vector<double> ex(tail_len);
      for (std::size_t i = 0; i < tail_len; ++i) ex[i] = std::exp(lw[order[first + i]]) - exp_cut;
      const GpdFit fit = gpd_fit(ex);
      out.k = fit.k;
      if (std::isfinite(fit.k) && fit.sigma > 0.0) {
        for (std::size_t i = 0; i < tail_len; ++i) {
          const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(tail_len);
          lw[order[first + i]] = std::log(gpd_quantile(p, fit.k, fit.sigma) + exp_cut);
        }
      }
    }
  }
  // Truncate at the raw maximum (zero after the shift).
  for (auto& v : lw)
    if (v > 0.0) v = 0.0;
  const double lse = math::log_sum_exp(lw);
  for (auto& v : lw) v -= lse;
  out.log_weights = std::move(lw);
  return out;
}

int LooResult::count(ParetoK c) const {
  return static_cast<int>(std::count(k_class.begin(), k_class.end(), c));
}

LooResult psis_loo(const Eigen::MatrixXd& ll, const std::vector<int>& chain_id) {
  const auto s = ll.rows();
  const auto n = ll.cols();
  if (s < 1 || n < 1) throw ConfigError("psis_loo: empty log-likelihood matrix");
  if (!chain_id.empty() && chain_id.size() != static_cast<std::size_t>(s))
    throw ConfigError("psis_loo: one chain id per draw required");
  LooResult out;
  out.n_draws = static_cast<int>(s);
  out.few_draws = s < 100;
  int n_chains = 0;
  for (int c : chain_id) n_chains = std::max(n_chains, c + 1);

  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> col(static_cast<std::size_t>(s));
    for (Eigen::Index r = 0; r < s; ++r) col[static_cast<std::size_t>(r)] = ll(r, i);
    const double lpd_i = math::log_sum_exp(col) - std::log(static_cast<double>(s));

    double r_eff = 1.0;
    if (n_chains > 0) {
      // Relative efficiency of exp(ll), chains of equal length only.
      const double mx = *std::max_element(col.begin(), col.end());
      ChainDraws by(static_cast<std::size_t>(n_chains));
      for (Eigen::Index r = 0; r < s; ++r)
        by[static_cast<std::size_t>(chain_id[static_cast<std::size_t>(r)])].push_back(std::exp(col[static_cast<std::size_t>(r)] - mx));
      if (const auto e = ess_basic(by)) r_eff = *e / static_cast<double>(s);
    }

    std::vector<double> lr(col.size());
    for (std::size_t r = 0; r < col.size(); ++r) lr[r] = -col[r];
    const bool degenerate = std::all_of(lr.begin(), lr.end(), [&](double v) { return v == lr.front(); });
    double elpd_i;
    double k = kNaN;
    if (degenerate) {
      elpd_i = lpd_i;
    } else {
      const auto w = psis(lr, r_eff);
      k = w.k;
      std::vector<double> t(col.size());
      for (std::size_t r = 0; r < col.size(); ++r) t[r] = col[r] + w.log_weights[r];
      elpd_i = math::log_sum_exp(t);
    }
    out.pointwise_elpd.push_back(elpd_i);
    out.pointwise_p_loo.push_back(lpd_i - elpd_i);
    out.pareto_k.push_back(k);
    out.k_class.push_back(classify_k(k));
    out.r_eff.push_back(r_eff);
    out.lpd += lpd_i;
  }
  out.elpd_loo = std::accumulate(out.pointwise_elpd.begin(), out.pointwise_elpd.end(), 0.0);
  out.p_loo = std::accumulate(out.pointwise_p_loo.begin(), out.pointwise_p_loo.end(), 0.0);
  out.looic = -2.0 * out.elpd_loo;
  out.se_elpd_loo = se_of(out.pointwise_elpd);
  out.se_p_loo = se_of(out.pointwise_p_loo);
  out.se_looic = 2.0 * out.se_elpd_loo;
  return out;
}

LooResult psis_loo(const PointwiseLogLik& ll) { return psis_loo(ll.ll, ll.chain_id); }

std::vector<CompareRow> compare(const std::vector<std::pair<std::string, LooResult>>& results) {
  if (results.empty()) return {};
  const auto& ref = results.front().second;
  for (const auto& [name, r] : results) {
    if (r.n_obs() != ref.n_obs())
      throw DataError("compare: '" + name + "' has " + std::to_string(r.n_obs()) + " observations, '" +
                      results.front().first + "' has " + std::to_string(ref.n_obs()));
    if (r.fingerprint != ref.fingerprint)
      throw DataError("compare: '" + name + "' was fitted to different data than '" + results.front().first + "'");
  }
  std::vector<CompareRow> rows;
  for (const auto& [name, r] : results) rows.push_back({name, r, 0.0, 0.0});
  std::stable_sort(rows.begin(), rows.end(), [](const CompareRow& a, const CompareRow& b) {
    if (a.loo.looic != b.loo.looic) return a.loo.looic < b.loo.looic;
    return a.model < b.model;
  });
  const auto& best = rows.front().loo.pointwise_elpd;
  for (auto& row : rows) {
    std::vector<double> d(best.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = row.loo.pointwise_elpd[i] - best[i];
    row.elpd_diff = std::accumulate(d.begin(), d.end(), 0.0);
    row.se_diff = se_of(d);
  }
  return rows;
}

}  // namespace crb
