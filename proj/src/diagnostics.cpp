#include "crb/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numeric>

#include <boost/math/special_functions/erf.hpp>
#include <unsupported/Eigen/FFT>

#include "crb/error.hpp"
#include "crb/math.hpp"

namespace crb {

// ---------------------------------------------------------------------------
// convergence
// ---------------------------------------------------------------------------

namespace {

bool shape_ok(const ChainDraws& chains, std::size_t min_chains) {
  if (chains.size() < min_chains) return false;
  for (const auto& c : chains)
    if (c.size() < 4 || c.size() != chains.front().size()) return false;
  return true;
}

bool is_constant(const ChainDraws& chains) {
  const double v0 = chains.front().front();
  for (const auto& c : chains)
    for (double v : c)
      if (v != v0) return false;
  return true;
}

bool all_finite(const ChainDraws& chains) {
  for (const auto& c : chains)
    for (double v : c)
      if (!std::isfinite(v)) return false;
  return true;
}

ChainDraws split(const ChainDraws& chains) {
  ChainDraws out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

// Inverse-normal of fractional ranks (r - 3/8) / (S + 1/4), ties averaged.
ChainDraws rank_normalize(const ChainDraws& chains) {
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  const std::size_t s = all.size();
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all[a] < all[b]; });
  std::vector<double> rank(s);
  for (std::size_t i = 0; i < s;) {
    std::size_t j = i;
    while (j + 1 < s && all[order[j + 1]] == all[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  ChainDraws out;
  std::size_t pos = 0;
  for (const auto& c : chains) {
    std::vector<double> z(c.size());
    for (auto& v : z) {
      const double p = (rank[pos++] - 0.375) / (static_cast<double>(s) + 0.25);
      v = -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
    }
    out.push_back(std::move(z));
  }
  return out;
}

double classic_rhat(const ChainDraws& chains) {
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(math::mean(c));
    vars.push_back(math::variance(c));
  }
  const double b = n * math::variance(means);
  const double w = math::mean(vars);
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

std::vector<double> autocovariance(const std::vector<double>& x) {
  const std::size_t n = x.size();
  const double mu = math::mean(x);
  std::size_t len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> padded(len, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - mu;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> back;
  fft.inv(back, freq);
  std::vector<double> acov(n);
  for (std::size_t t = 0; t < n; ++t) acov[t] = back[t] / static_cast<double>(n);
  return acov;
}

double geyer_ess(const ChainDraws& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<std::vector<double>> acov;
  std::vector<double> chain_mean, chain_var;
  for (const auto& c : chains) {
    acov.push_back(autocovariance(c));
    chain_mean.push_back(math::mean(c));
    chain_var.push_back(acov.back()[0] * static_cast<double>(n) / (static_cast<double>(n) - 1.0));
  }
  const double mean_var = math::mean(chain_var);
  double var_plus = mean_var * (static_cast<double>(n) - 1.0) / static_cast<double>(n);
  if (m > 1) var_plus += math::variance(chain_mean);
  auto mean_acov = [&](std::size_t t) {
    double s = 0.0;
    for (const auto& a : acov) s += a[t];
    return s / static_cast<double>(m);
  };
  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double even = 1.0;
  double odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = odd;
  std::size_t t = 0;
  while (t + 5 < n && std::isfinite(even + odd) && even + odd > 0.0) {
    t += 2;
    even = 1.0 - (mean_var - mean_acov(t)) / var_plus;
    odd = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
    if (even + odd >= 0.0) {
      rho[t] = even;
      rho[t + 1] = odd;
    }
  }
  const std::size_t max_t = t;
  if (even > 0.0) rho[max_t] = even;
  // Initial monotone sequence.
  t = 0;
  while (t + 4 <= max_t) {
    t += 2;
    if (rho[t] + rho[t + 1] > rho[t - 2] + rho[t - 1]) {
      rho[t] = 0.5 * (rho[t - 2] + rho[t - 1]);
      rho[t + 1] = rho[t];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0 + rho[max_t];
  for (std::size_t i = 0; i < max_t; ++i) tau += 2.0 * rho[i];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

ChainDraws indicator(const ChainDraws& chains, double cut) {
  ChainDraws out;
  for (const auto& c : chains) {
    std::vector<double> v(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) v[i] = c[i] <= cut ? 1.0 : 0.0;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<double> pooled(const ChainDraws& chains) {
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  return all;
}

}  // namespace

std::optional<double> rank_rhat(const ChainDraws& chains) {
  if (!shape_ok(chains, 2) || !all_finite(chains) || is_constant(chains)) return std::nullopt;
  const ChainDraws s = split(chains);
  const double bulk = classic_rhat(rank_normalize(s));
  const double med = math::quantile(pooled(chains), 0.5);
  ChainDraws folded = s;
  for (auto& c : folded)
    for (auto& v : c) v = std::abs(v - med);
  const double tail = classic_rhat(rank_normalize(folded));
  const double r = std::max(bulk, tail);
  if (!std::isfinite(r)) return std::nullopt;
  return r;
}

std::optional<double> ess_bulk(const ChainDraws& chains) {
  if (!shape_ok(chains, 1) || !all_finite(chains) || is_constant(chains)) return std::nullopt;
  const double e = geyer_ess(rank_normalize(split(chains)));
  if (!std::isfinite(e)) return std::nullopt;
  return e;
}

std::optional<double> ess_tail(const ChainDraws& chains) {
  if (!shape_ok(chains, 1) || !all_finite(chains) || is_constant(chains)) return std::nullopt;
  const auto all = pooled(chains);
  const ChainDraws s = split(chains);
  double best = math::kInf;
  for (double q : {0.05, 0.95}) {
    const ChainDraws ind = indicator(s, math::quantile(all, q));
    if (is_constant(ind)) return std::nullopt;
    best = std::min(best, geyer_ess(ind));
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

std::optional<double> ess_basic(const ChainDraws& chains) {
  if (!shape_ok(chains, 1) || !all_finite(chains) || is_constant(chains)) return std::nullopt;
  return geyer_ess(chains);
}

ConvergenceRow convergence_row(std::string name, const ChainDraws& chains) {
  ConvergenceRow row;
  row.name = std::move(name);
  auto all = pooled(chains);
  row.mean = math::mean(all);
  row.sd = all.size() > 1 ? std::sqrt(math::variance(all)) : 0.0;
  std::sort(all.begin(), all.end());
  row.q05 = math::sorted_quantile(all, 0.05);
  row.q50 = math::sorted_quantile(all, 0.5);
  row.q95 = math::sorted_quantile(all, 0.95);
  row.rhat = rank_rhat(chains);
  row.ess_bulk = ess_bulk(chains);
  row.ess_tail = ess_tail(chains);
  return row;
}

std::vector<ConvergenceRow> convergence_report(const PosteriorDraws& fit) {
  std::vector<ConvergenceRow> out;
  for (Eigen::Index j = 0; j < fit.dim(); ++j) {
    const std::string name =
        static_cast<std::size_t>(j) < fit.names.size() ? fit.names[static_cast<std::size_t>(j)] : "theta[" + std::to_string(j) + "]";
    out.push_back(convergence_row(name, fit.by_chain(j)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// population-level quantities
// ---------------------------------------------------------------------------

int PopulationDraws::column(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

ChainDraws PopulationDraws::by_chain(int col) const {
  int n_chains = 0;
  for (int c : chain_id) n_chains = std::max(n_chains, c + 1);
  ChainDraws out(static_cast<std::size_t>(n_chains));
  for (Eigen::Index r = 0; r < values.rows(); ++r) out[static_cast<std::size_t>(chain_id[static_cast<std::size_t>(r)])].push_back(values(r, col));
  return out;
}

namespace {

std::span<const double> row_span(const PosteriorDraws& fit, int draw, std::vector<double>& buf) {
  buf.resize(static_cast<std::size_t>(fit.dim()));
  for (Eigen::Index j = 0; j < fit.dim(); ++j) buf[static_cast<std::size_t>(j)] = fit.draws(draw, j);
  return buf;
}

}  // namespace

PopulationDraws population_draws(const PosteriorDraws& fit, const ModelSpec& model) {
  PopulationDraws out;
  out.chain_id = fit.chain_id;
  std::vector<double> buf;
  for (Eigen::Index r = 0; r < fit.n_draws(); ++r) {
    const auto summary = population_summary(model, constrain(row_span(fit, static_cast<int>(r), buf), model));
    if (r == 0) {
      for (const auto& nv : summary) out.names.push_back(nv.name);
      out.values.resize(fit.n_draws(), static_cast<Eigen::Index>(summary.size()));
    }
    for (std::size_t j = 0; j < summary.size(); ++j) out.values(r, static_cast<Eigen::Index>(j)) = summary[j].value;
  }
  return out;
}

std::string OddsRatio::formatted() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.2f (%.2f, %.2f)", median, q05, q95);
  return buf;
}

OddsRatio odds_ratio(std::string name, std::span<const double> beta_draws) {
  std::vector<double> e(beta_draws.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::exp(beta_draws[i]);
  std::sort(e.begin(), e.end());
  OddsRatio o;
  o.name = std::move(name);
  o.median = math::sorted_quantile(e, 0.5);
  o.q25 = math::sorted_quantile(e, 0.25);
  o.q75 = math::sorted_quantile(e, 0.75);
  o.q05 = math::sorted_quantile(e, 0.05);
  o.q95 = math::sorted_quantile(e, 0.95);
  return o;
}

std::vector<std::string> coefficient_names(const ModelSpec& model) {
  std::vector<std::string> out;
  for (std::size_t p = 0; p < model.predictors.size(); ++p)
    for (std::size_t j = 0; j < model.predictors[p].fixed_effect_columns.size(); ++j)
      out.push_back(model.coefficient_name(static_cast<int>(p), static_cast<int>(j)));
  return out;
}

std::vector<OddsRatio> odds_ratio_summary(const PosteriorDraws& fit, const ModelSpec& model,
                                          const std::vector<std::string>& coefficients) {
  const auto available = coefficient_names(model);
  for (const auto& c : coefficients)
    if (std::find(available.begin(), available.end(), c) == available.end()) {
      std::string list;
      for (const auto& a : available) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError("unknown coefficient '" + c + "'; available: " + list);
    }
  const auto pop = population_draws(fit, model);
  std::vector<OddsRatio> out;
  for (const auto& c : coefficients) {
    const int col = pop.column(c);
    std::vector<double> d(pop.values.col(col).data(), pop.values.col(col).data() + pop.values.rows());
    out.push_back(odds_ratio(c, d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// posterior prediction
// ---------------------------------------------------------------------------

std::vector<int> spread_draws(int n_available, int n_wanted) {
  if (n_wanted <= 0 || n_available <= 0) return {};
  n_wanted = std::min(n_wanted, n_available);
  std::vector<int> out(static_cast<std::size_t>(n_wanted));
  for (int k = 0; k < n_wanted; ++k)
    out[static_cast<std::size_t>(k)] =
        static_cast<int>((static_cast<long long>(2 * k + 1) * n_available) / (2LL * n_wanted));
  return out;
}

std::vector<FamilyParams> draw_params(const PosteriorDraws& fit, int draw, const ModelSpec& model,
                                      const ModelData& data) {
  std::vector<double> buf;
  return observation_params(model, constrain(row_span(fit, draw, buf), model), data);
}

PredictiveDrawSet posterior_predict(const PosteriorDraws& fit, const ModelSpec& model, const ModelData& data,
                                    int n_pp_draws, Rng& rng) {
  if (n_pp_draws > fit.n_draws())
    throw ConfigError("requested " + std::to_string(n_pp_draws) + " predictive draws but only " +
                      std::to_string(fit.n_draws()) + " are retained");
  PredictiveDrawSet out;
  out.draw_index = spread_draws(static_cast<int>(fit.n_draws()), n_pp_draws);
  for (int d : out.draw_index) {
    const auto params = draw_params(fit, d, model, data);
    std::vector<int> y(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) y[i] = family_sample(params[i], model.n_days, rng);
    out.y_rep.push_back(std::move(y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// checks
// ---------------------------------------------------------------------------

std::string CountSupport::label(int i) const {
  if (overflow && i == n_days + 1) return ">" + std::to_string(n_days);
  return std::to_string(i);
}

int CountSupport::bucket(int count) const {
  if (count > n_days) {
    if (!overflow) throw DataError("count " + std::to_string(count) + " exceeds the bounded support 0.." + std::to_string(n_days));
    return n_days + 1;
  }
  if (count < 0) throw DataError("negative count " + std::to_string(count));
  return count;
}

std::vector<double> ecdf(std::span<const int> values, const CountSupport& support) {
  std::vector<long> freq(static_cast<std::size_t>(support.size()), 0);
  for (int v : values) ++freq[static_cast<std::size_t>(support.bucket(v))];
  std::vector<double> out(freq.size());
  const auto n = static_cast<long>(values.size());
  long cum = 0;
  for (std::size_t i = 0; i < freq.size(); ++i) {
    cum += freq[i];
    out[i] = n > 0 ? (cum == n ? 1.0 : static_cast<double>(cum) / static_cast<double>(n)) : 1.0;
  }
  return out;
}

std::vector<std::string> group_levels(const std::vector<std::string>& groups) {
  std::vector<std::string> lv = groups;
  std::sort(lv.begin(), lv.end());
  lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
  auto numeric = [](const std::string& s, double& v) {
    char* end = nullptr;
    v = std::strtod(s.c_str(), &end);
    return !s.empty() && end && *end == '\0';
  };
  bool all_num = true;
  double tmp;
  for (const auto& s : lv) all_num = all_num && numeric(s, tmp);
  if (all_num)
    std::sort(lv.begin(), lv.end(), [&](const std::string& a, const std::string& b) {
      double x, y;
      numeric(a, x);
      numeric(b, y);
      return x < y;
    });
  return lv;
}

namespace {

std::vector<int> select(std::span<const int> v, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

EcdfCurve make_curve(std::string group, std::span<const int> observed, const PredictiveDrawSet& rep,
                     const CountSupport& support, const std::vector<std::size_t>& idx) {
  EcdfCurve c;
  c.group = std::move(group);
  c.n_obs = static_cast<int>(idx.size());
  c.observed = ecdf(select(observed, idx), support);
  for (const auto& y : rep.y_rep) c.replicates.push_back(ecdf(select(y, idx), support));
  return c;
}

}  // namespace

EcdfCheck ecdf_check(std::span<const int> observed, const PredictiveDrawSet& rep, const CountSupport& support,
                     const std::vector<std::string>* groups) {
  if (observed.empty()) throw DataError("ecdf check on empty data");
  EcdfCheck out;
  out.support = support;
  out.draw_index = rep.draw_index;
  if (!groups) {
    std::vector<std::size_t> idx(observed.size());
    std::iota(idx.begin(), idx.end(), 0);
    out.curves.push_back(make_curve("all", observed, rep, support, idx));
    return out;
  }
  for (const auto& level : group_levels(*groups)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < groups->size(); ++i)
      if ((*groups)[i] == level) idx.push_back(i);
    if (idx.empty()) continue;
    out.curves.push_back(make_curve(level, observed, rep, support, idx));
  }
  return out;
}

std::vector<RootogramRow> rootogram_check(std::span<const int> observed, const PredictiveDrawSet& rep,
                                          const CountSupport& support) {
  const auto k = static_cast<std::size_t>(support.size());
  std::vector<double> obs(k, 0.0);
  for (int v : observed) obs[static_cast<std::size_t>(support.bucket(v))] += 1.0;
  std::vector<std::vector<double>> rep_sqrt(k);
  for (const auto& y : rep.y_rep) {
    std::vector<double> f(k, 0.0);
    for (int v : y) f[static_cast<std::size_t>(support.bucket(v))] += 1.0;
    for (std::size_t i = 0; i < k; ++i) rep_sqrt[i].push_back(std::sqrt(f[i]));
  }
  std::vector<RootogramRow> out;
  for (std::size_t i = 0; i < k; ++i) {
    RootogramRow r;
    r.count = support.label(static_cast<int>(i));
    r.sqrt_observed = std::sqrt(obs[i]);
    auto s = rep_sqrt[i];
    std::sort(s.begin(), s.end());
    r.sqrt_expected = s.empty() ? 0.0 : math::sorted_quantile(s, 0.5);
    r.lower = s.empty() ? 0.0 : math::sorted_quantile(s, 0.05);
    r.upper = s.empty() ? 0.0 : math::sorted_quantile(s, 0.95);
    r.residual = r.sqrt_expected - r.sqrt_observed;
    out.push_back(r);
  }
  return out;
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = math::mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double SdGroup::tail_fraction() const {
  if (replicate_sd.empty()) return 0.0;
  std::size_t below = 0;
  for (double s : replicate_sd) below += s <= observed_sd ? 1 : 0;
  return static_cast<double>(below) / static_cast<double>(replicate_sd.size());
}

std::vector<SdGroup> sd_check(std::span<const int> observed, const PredictiveDrawSet& rep,
                              const std::vector<std::string>& groups) {
  if (groups.size() != observed.size()) throw DataError("sd check: one group label per observation required");
  std::vector<SdGroup> out;
  for (const auto& level : group_levels(groups)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i] == level) idx.push_back(i);
    if (idx.size() < 2) continue;
    SdGroup g;
    g.group = level;
    g.n_obs = static_cast<int>(idx.size());
    auto as_double = [&](std::span<const int> v) {
      std::vector<double> x;
      for (auto i : idx) x.push_back(static_cast<double>(v[i]));
      return x;
    };
    g.observed_sd = sample_sd(as_double(observed));
    for (const auto& y : rep.y_rep) g.replicate_sd.push_back(sample_sd(as_double(y)));
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<ObservationSummary> numeric_summaries(const PosteriorDraws& fit, const ModelSpec& model,
                                                  const ModelData& data, int max_draws) {
  const int n_avail = static_cast<int>(fit.n_draws());
  const auto draws = spread_draws(n_avail, max_draws > 0 ? max_draws : n_avail);
  const auto n = static_cast<std::size_t>(data.n_obs());
  std::vector<double> sum_mean(n, 0.0), sum_mean2(n, 0.0), sum_var(n, 0.0);
  std::vector<std::vector<double>> pmf_sum(n);
  for (int d : draws) {
    const auto params = draw_params(fit, d, model, data);
    for (std::size_t i = 0; i < n; ++i) {
      const auto pmf = family_pmf(params[i], model.n_days);
      double m = 0.0, v = 0.0;
      for (std::size_t k = 0; k < pmf.size(); ++k) m += static_cast<double>(k) * pmf[k];
      for (std::size_t k = 0; k < pmf.size(); ++k) v += (static_cast<double>(k) - m) * (static_cast<double>(k) - m) * pmf[k];
      sum_mean[i] += m;
      sum_mean2[i] += m * m;
      sum_var[i] += v;
      auto& acc = pmf_sum[i];
      if (acc.size() < pmf.size()) acc.resize(pmf.size(), 0.0);
      for (std::size_t k = 0; k < pmf.size(); ++k) acc[k] += pmf[k];
    }
  }
  const double s = static_cast<double>(draws.size());
  std::vector<ObservationSummary> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& o = out[i];
    o.mean = sum_mean[i] / s;
    o.variance = sum_var[i] / s + std::max(0.0, sum_mean2[i] / s - o.mean * o.mean);
    for (auto& p : pmf_sum[i]) p /= s;
    o.q05 = pmf_quantile(pmf_sum[i], 0.05);
    o.q50 = pmf_quantile(pmf_sum[i], 0.5);
    o.q95 = pmf_quantile(pmf_sum[i], 0.95);
  }
  return out;
}

}  // namespace crb
