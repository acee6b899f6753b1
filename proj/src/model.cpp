#include "crb/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <boost/math/special_functions/digamma.hpp>

#include "crb/error.hpp"
#include "crb/math.hpp"

namespace crb {

using math::kInf;

// ---------------------------------------------------------------------------
// layout
// ---------------------------------------------------------------------------

void ParameterLayout::add(std::string name, std::size_t length) {
  blocks_.push_back({std::move(name), dim_, length});
  dim_ += length;
}

const ParameterBlock* ParameterLayout::find(std::string_view name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return &b;
  return nullptr;
}

const ParameterBlock& ParameterLayout::at(std::string_view name) const {
  const auto* b = find(name);
  if (!b) throw std::logic_error("layout has no block '" + std::string(name) + "'");
  return *b;
}

std::vector<std::string> ParameterLayout::coordinate_names() const {
  std::vector<std::string> names;
  names.reserve(dim_);
  for (const auto& b : blocks_) {
    if (b.length == 1) {
      names.push_back(b.name);
      continue;
    }
    for (std::size_t i = 0; i < b.length; ++i) names.push_back(b.name + "[" + std::to_string(i) + "]");
  }
  return names;
}

// ---------------------------------------------------------------------------
// assembly
// ---------------------------------------------------------------------------

namespace {

int param_rank(DistParam p) {
  switch (p) {
    case DistParam::Eta: return 0;
    case DistParam::Pi: return 1;
    case DistParam::Mu: return 2;
    case DistParam::Psi: return 3;
    case DistParam::Phi: return 4;
    case DistParam::Alpha: return 5;
  }
  return 6;
}

std::string pname(DistParam p) { return std::string(dist_param_name(p)); }

}  // namespace

int ModelSpec::predictor_of(DistParam p) const {
  for (std::size_t i = 0; i < predictors.size(); ++i)
    if (predictors[i].param == p) return static_cast<int>(i);
  return -1;
}

std::string ModelSpec::coefficient_name(int predictor, int j) const {
  const auto& spec = predictors[static_cast<std::size_t>(predictor)];
  const auto& col = column_names[static_cast<std::size_t>(spec.fixed_effect_columns[static_cast<std::size_t>(j)])];
  return predictor == 0 ? col : pname(spec.param) + "_" + col;
}

ModelSpec assemble_model(Family family, std::vector<LinearPredictorSpec> specs, const DesignMatrix& design,
                         IntervalLength n, const PriorConfig& priors) {
  priors.validate();
  if (specs.empty()) throw ConfigError("model: at least one linear predictor is required");
  std::sort(specs.begin(), specs.end(),
            [](const auto& a, const auto& b) { return param_rank(a.param) < param_rank(b.param); });
  std::set<DistParam> params;
  for (const auto& s : specs)
    if (!params.insert(s.param).second) throw ConfigError("model: duplicate predictor for '" + pname(s.param) + "'");

  using S = std::set<DistParam>;
  bool valid = false;
  switch (family) {
    case Family::CRatio: valid = params == S{DistParam::Eta}; break;
    case Family::Binomial: valid = params == S{DistParam::Pi}; break;
    case Family::BetaBinomial: valid = params == S{DistParam::Pi} || params == S{DistParam::Pi, DistParam::Phi}; break;
    case Family::HurdleNB:
      valid = params == S{DistParam::Mu} || params == S{DistParam::Psi, DistParam::Mu} ||
              params == S{DistParam::Psi, DistParam::Mu, DistParam::Alpha};
      break;
  }
  if (!valid) {
    std::string got;
    for (auto p : params) got += (got.empty() ? "" : ",") + pname(p);
    throw ConfigError("model: unsupported regressed parameter set {" + got + "} for family " +
                      std::string(family_name(family)));
  }

  ModelSpec m;
  m.family = family;
  m.n_days = n;
  m.priors = priors;
  m.column_names = design.column_names;
  m.n_persons = design.n_persons();
  for (auto& s : specs) {
    if (s.link != natural_link(s.param))
      throw ConfigError("model: '" + pname(s.param) + "' requires the " + std::string(link_name(natural_link(s.param))) +
                        " link");
    s.has_intercept = family != Family::CRatio;
    std::set<int> seen;
    for (int c : s.fixed_effect_columns) {
      if (c < 0 || c >= design.n_cols())
        throw ConfigError("model: design column index " + std::to_string(c) + " out of range");
      if (!seen.insert(c).second) throw ConfigError("model: repeated design column for '" + pname(s.param) + "'");
    }
    m.re_index.push_back(s.has_random_intercept ? m.n_re++ : -1);
  }
  m.predictors = std::move(specs);
  m.scalar_phi = family == Family::BetaBinomial && !params.contains(DistParam::Phi);
  m.scalar_psi = family == Family::HurdleNB && !params.contains(DistParam::Psi);
  m.scalar_alpha = family == Family::HurdleNB && !params.contains(DistParam::Alpha);

  for (const auto& s : m.predictors) {
    const auto base = pname(s.param);
    if (s.has_intercept) m.layout.add(base + ".intercept", 1);
    const auto p = s.fixed_effect_columns.size();
    if (p > 0) {
      m.layout.add(base + ".hs_z", p);
      m.layout.add(base + ".hs_log_lambda", p);
      m.layout.add(base + ".hs_log_tau", 1);
    }
  }
  if (family == Family::CRatio) m.layout.add("thresholds", static_cast<std::size_t>(n.days()));
  if (m.scalar_phi) m.layout.add("log_phi", 1);
  if (m.scalar_psi) m.layout.add("logit_psi", 1);
  if (m.scalar_alpha) m.layout.add("log_alpha", 1);
  if (m.n_re > 0) {
    const auto k = static_cast<std::size_t>(m.n_re);
    m.layout.add("re.log_sigma", k);
    if (k > 1) m.layout.add("re.corr", k * (k - 1) / 2);
    m.layout.add("re.z", static_cast<std::size_t>(m.n_persons) * k);
  }
  return m;
}

ModelData ModelData::prepare(const ModelSpec& model, DesignMatrix design, std::vector<int> days,
                             std::vector<std::string> waves) {
  if (static_cast<int>(days.size()) != design.n_obs()) throw std::logic_error("ModelData: response/design size mismatch");
  if (design.n_persons() != model.n_persons || design.column_names != model.column_names)
    throw std::logic_error("ModelData: design does not match the model");
  for (std::size_t i = 0; i < days.size(); ++i) {
    const bool ok = model.family == Family::HurdleNB ? days[i] >= 0 : model.n_days.contains(days[i]);
    if (!ok) throw DataError("row " + std::to_string(i + 1) + ": count " + std::to_string(days[i]) + " outside 0.." +
                             std::to_string(model.n_days.days()));
  }
  ModelData d;
  d.design = std::move(design);
  d.days = std::move(days);
  d.waves = std::move(waves);
  for (const auto& s : model.predictors) {
    Eigen::MatrixXd x(d.design.n_obs(), static_cast<Eigen::Index>(s.fixed_effect_columns.size()));
    for (std::size_t j = 0; j < s.fixed_effect_columns.size(); ++j)
      x.col(static_cast<Eigen::Index>(j)) = d.design.rows.col(s.fixed_effect_columns[j]);
    d.predictor_x.push_back(std::move(x));
  }
  return d;
}

std::uint64_t ModelData::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(days.size());
  for (std::size_t i = 0; i < days.size(); ++i) {
    mix(static_cast<std::uint64_t>(days[i]));
    mix(static_cast<std::uint64_t>(design.person_index[i]));
  }
  for (Eigen::Index i = 0; i < design.rows.rows(); ++i)
    for (Eigen::Index j = 0; j < design.rows.cols(); ++j) mix(design.rows(i, j) != 0.0 ? 1U : 0U);
  return h;
}

// ---------------------------------------------------------------------------
// constrain
// ---------------------------------------------------------------------------

namespace {

double at(std::span<const double> theta, const ParameterBlock& b, std::size_t i = 0) { return theta[b.offset + i]; }

}  // namespace

ConstrainedParams constrain(std::span<const double> theta, const ModelSpec& model) {
  const auto& lay = model.layout;
  if (theta.size() != lay.dim()) throw std::logic_error("constrain: theta has wrong dimension");
  ConstrainedParams cp;
  for (const auto& s : model.predictors) {
    const auto base = pname(s.param);
    CoefficientVector c;
    HorseshoeState hs;
    if (s.has_intercept) c.intercept = at(theta, lay.at(base + ".intercept"));
    const auto p = static_cast<Eigen::Index>(s.fixed_effect_columns.size());
    c.beta = Eigen::VectorXd::Zero(p);
    hs.lambda = Eigen::VectorXd::Zero(p);
    if (p > 0) {
      const auto& zb = lay.at(base + ".hs_z");
      const auto& lb = lay.at(base + ".hs_log_lambda");
      hs.tau = std::exp(at(theta, lay.at(base + ".hs_log_tau")));
      for (Eigen::Index j = 0; j < p; ++j) {
        hs.lambda(j) = std::exp(at(theta, lb, static_cast<std::size_t>(j)));
        c.beta(j) = at(theta, zb, static_cast<std::size_t>(j)) * hs.lambda(j) * hs.tau;
      }
    }
    cp.coef.push_back(std::move(c));
    cp.horseshoe.push_back(std::move(hs));
  }
  if (const auto* tb = lay.find("thresholds")) cp.thresholds.assign(theta.begin() + static_cast<std::ptrdiff_t>(tb->offset),
                                                                     theta.begin() + static_cast<std::ptrdiff_t>(tb->offset + tb->length));
  if (model.scalar_phi) cp.phi = std::exp(at(theta, lay.at("log_phi")));
  if (model.scalar_psi) cp.psi = math::sigmoid(at(theta, lay.at("logit_psi")));
  if (model.scalar_alpha) cp.alpha = std::exp(at(theta, lay.at("log_alpha")));

  const int k = model.n_re;
  cp.re.b = Eigen::MatrixXd::Zero(model.n_persons, k);
  cp.re.sigma = Eigen::VectorXd::Zero(k);
  cp.re.corr_chol = Eigen::MatrixXd::Identity(k, k);
  if (k > 0) {
    const auto& sb = lay.at("re.log_sigma");
    for (int c = 0; c < k; ++c) cp.re.sigma(c) = std::exp(at(theta, sb, static_cast<std::size_t>(c)));
    if (k > 1) {
      const auto& cb = lay.at("re.corr");
      cp.re.corr_chol = corr_cholesky_transform(theta.subspan(cb.offset, cb.length), k, model.priors.lkj_eta).L;
    }
    const auto& zb = lay.at("re.z");
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> z(
        theta.data() + zb.offset, model.n_persons, k);
    cp.re.b = (z * cp.re.corr_chol.transpose()) * cp.re.sigma.asDiagonal();
  }
  return cp;
}

std::vector<FamilyParams> observation_params(const ModelSpec& model, const ConstrainedParams& cp,
                                             const ModelData& data) {
  const auto n = data.n_obs();
  std::vector<Eigen::VectorXd> eta;
  for (std::size_t p = 0; p < model.predictors.size(); ++p)
    eta.push_back(linear_predictor(data.design, cp.coef[p], cp.re, model.re_index[p], model.predictors[p]));
  auto value = [&](DistParam dp, int row, double scalar) {
    const int p = model.predictor_of(dp);
    if (p < 0) return scalar;
    return link_inverse(eta[static_cast<std::size_t>(p)](row), model.predictors[static_cast<std::size_t>(p)].link);
  };
  std::vector<FamilyParams> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    switch (model.family) {
      case Family::CRatio: out.emplace_back(CRatioParams{eta[0](i), cp.thresholds}); break;
      case Family::Binomial: out.emplace_back(BinomialParams{value(DistParam::Pi, i, 0.0)}); break;
      case Family::BetaBinomial:
        out.emplace_back(BetaBinParams{value(DistParam::Pi, i, 0.0), value(DistParam::Phi, i, cp.phi)});
        break;
      case Family::HurdleNB:
        out.emplace_back(HurdleNBParams{value(DistParam::Psi, i, cp.psi), value(DistParam::Mu, i, 0.0),
                                        value(DistParam::Alpha, i, cp.alpha)});
        break;
    }
  }
  return out;
}

std::vector<NamedValue> population_summary(const ModelSpec& model, const ConstrainedParams& cp) {
  std::vector<NamedValue> out;
  for (std::size_t p = 0; p < model.predictors.size(); ++p) {
    const auto& s = model.predictors[p];
    const std::string prefix = p == 0 ? "" : pname(s.param) + "_";
    if (s.has_intercept) out.push_back({prefix + "Intercept", cp.coef[p].intercept});
    for (Eigen::Index j = 0; j < cp.coef[p].beta.size(); ++j)
      out.push_back({model.coefficient_name(static_cast<int>(p), static_cast<int>(j)), cp.coef[p].beta(j)});
  }
  for (std::size_t r = 0; r < cp.thresholds.size(); ++r)
    out.push_back({"threshold[" + std::to_string(r + 1) + "]", cp.thresholds[r]});
  if (model.scalar_phi) out.push_back({"phi", cp.phi});
  if (model.scalar_psi) out.push_back({"psi", cp.psi});
  if (model.scalar_alpha) out.push_back({"alpha", cp.alpha});
  std::vector<std::string> re_names(static_cast<std::size_t>(model.n_re));
  for (std::size_t p = 0; p < model.predictors.size(); ++p)
    if (model.re_index[p] >= 0) re_names[static_cast<std::size_t>(model.re_index[p])] = pname(model.predictors[p].param);
  for (int c = 0; c < model.n_re; ++c) out.push_back({"sd(" + re_names[static_cast<std::size_t>(c)] + ")", cp.re.sigma(c)});
  if (model.n_re > 1) {
    const Eigen::MatrixXd omega = cp.re.corr_chol * cp.re.corr_chol.transpose();
    for (int i = 1; i < model.n_re; ++i)
      for (int j = 0; j < i; ++j)
        out.push_back({"cor(" + re_names[static_cast<std::size_t>(j)] + "," + re_names[static_cast<std::size_t>(i)] + ")",
                       omega(i, j)});
  }
  for (std::size_t p = 0; p < model.predictors.size(); ++p)
    if (!model.predictors[p].fixed_effect_columns.empty())
      out.push_back({"tau(" + pname(model.predictors[p].param) + ")", cp.horseshoe[p].tau});
  return out;
}

// ---------------------------------------------------------------------------
// log posterior
// ---------------------------------------------------------------------------

namespace {

// sum_{i<d} 1/(r+i) and sum_{i<d} log(r+i), exact for small d; falls back to
// special functions otherwise.
struct GammaRatio {
  double log_ratio;  // lgamma(d + r) - lgamma(r)
  double digamma_diff;  // digamma(d + r) - digamma(r)
};

GammaRatio gamma_ratio(int d, double r) {
  if (d <= 64) {
    GammaRatio g{0.0, 0.0};
    for (int i = 0; i < d; ++i) {
      g.log_ratio += std::log(r + i);
      g.digamma_diff += 1.0 / (r + i);
    }
    return g;
  }
  return {std::lgamma(d + r) - std::lgamma(r), boost::math::digamma(d + r) - boost::math::digamma(r)};
}

// Likelihood terms and their derivatives with respect to each predictor's
// linear predictor (per row) and to thresholds / family scalars.
struct LikelihoodGrad {
  double value = 0.0;
  std::vector<Eigen::VectorXd> d_eta;  // per predictor
  Eigen::VectorXd d_thresholds;
  double d_logit_psi = 0.0;
  double d_log_phi = 0.0;
  double d_log_alpha = 0.0;
};

LikelihoodGrad likelihood(const ModelSpec& model, const ModelData& data, const std::vector<Eigen::VectorXd>& eta,
                          const ConstrainedParams& cp, double logit_psi, bool want_grad) {
  LikelihoodGrad out;
  const int n = data.n_obs();
  const int N = model.n_days.days();
  for (const auto& e : eta) out.d_eta.push_back(Eigen::VectorXd::Zero(e.size()));
  out.d_thresholds = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cp.thresholds.size()));

  switch (model.family) {
    case Family::CRatio: {
      const auto& th = cp.thresholds;
      double* gth = out.d_thresholds.data();
      for (int i = 0; i < n; ++i) {
        const double e = eta[0](i);
        const int d = data.days[static_cast<std::size_t>(i)];
        double g = 0.0;
        for (int r = 0; r < d; ++r) {
          const double x = e - th[static_cast<std::size_t>(r)];
          out.value += math::log_sigmoid(x);
          const double s = math::sigmoid(-x);
          g += s;
          gth[r] -= s;
        }
        if (d < N) {
          const double x = th[static_cast<std::size_t>(d)] - e;
          out.value += math::log_sigmoid(x);
          const double s = math::sigmoid(-x);
          g -= s;
          gth[d] += s;
        }
        out.d_eta[0](i) = g;
      }
      break;
    }
    case Family::Binomial: {
      for (int i = 0; i < n; ++i) {
        const double e = eta[0](i);
        const int d = data.days[static_cast<std::size_t>(i)];
        out.value += math::log_choose(N, d) + d * math::log_sigmoid(e) + (N - d) * math::log_sigmoid(-e);
        out.d_eta[0](i) = d - N * math::sigmoid(e);
      }
      break;
    }
    case Family::BetaBinomial: {
      const int phi_p = model.predictor_of(DistParam::Phi);
      for (int i = 0; i < n; ++i) {
        const double e = eta[0](i);
        const double pi = math::sigmoid(e);
        const double pi_c = math::sigmoid(-e);
        const double phi = phi_p >= 0 ? std::exp(eta[static_cast<std::size_t>(phi_p)](i)) : cp.phi;
        const int d = data.days[static_cast<std::size_t>(i)];
        const double a = pi / phi;
        const double b = pi_c / phi;
        out.value += kernel::beta_bin_log_pmf_shapes(d, N, a, b);
        if (!want_grad || !(a > 0.0 && b > 0.0)) continue;
        double ga = 0.0, gb = 0.0, gab = 0.0;
        for (int r = 0; r < d; ++r) ga += 1.0 / (a + r);
        for (int r = 0; r < N - d; ++r) gb += 1.0 / (b + r);
        for (int r = 0; r < N; ++r) gab += 1.0 / (a + b + r);
        ga -= gab;
        gb -= gab;
        out.d_eta[0](i) = (ga - gb) / phi * pi * pi_c;
        const double g_log_phi = -(a * ga + b * gb);
        if (phi_p >= 0) out.d_eta[static_cast<std::size_t>(phi_p)](i) = g_log_phi;
        else out.d_log_phi += g_log_phi;
      }
      break;
    }
    case Family::HurdleNB: {
      const int mu_p = model.predictor_of(DistParam::Mu);
      const int psi_p = model.predictor_of(DistParam::Psi);
      const int alpha_p = model.predictor_of(DistParam::Alpha);
      for (int i = 0; i < n; ++i) {
        const double psi_eta = psi_p >= 0 ? eta[static_cast<std::size_t>(psi_p)](i) : logit_psi;
        const int d = data.days[static_cast<std::size_t>(i)];
        double g_psi = 0.0;
        if (d == 0) {
          out.value += math::log_sigmoid(psi_eta);
          g_psi = math::sigmoid(-psi_eta);
        } else {
          const double log_mu = eta[static_cast<std::size_t>(mu_p)](i);
          const double mu = std::exp(log_mu);
          const double alpha = alpha_p >= 0 ? std::exp(eta[static_cast<std::size_t>(alpha_p)](i)) : cp.alpha;
          const double r = 1.0 / alpha;
          const double u = alpha * mu;
          const double l1pu = std::log1p(u);
          const double log_p0 = -r * l1pu;
          const auto gr = gamma_ratio(d, r);
          const double log_nb = gr.log_ratio - std::lgamma(d + 1.0) + log_p0 + d * (std::log(u) - l1pu);
          out.value += math::log_sigmoid(-psi_eta) + log_nb - math::log1m_exp(log_p0);
          g_psi = -math::sigmoid(psi_eta);
          if (want_grad) {
            const double odds0 = 1.0 / std::expm1(-log_p0);  // NB0 / (1 - NB0)
            const double g_mu = (d - mu) / (1.0 + u) - odds0 * mu / (1.0 + u);
            const double dl0_da = r * l1pu - r * u / (1.0 + u);
            const double g_alpha = -r * gr.digamma_diff + dl0_da + d / (1.0 + u) + odds0 * dl0_da;
            out.d_eta[static_cast<std::size_t>(mu_p)](i) = g_mu;
            if (alpha_p >= 0) out.d_eta[static_cast<std::size_t>(alpha_p)](i) = g_alpha;
            else out.d_log_alpha += g_alpha;
          }
        }
        if (psi_p >= 0) out.d_eta[static_cast<std::size_t>(psi_p)](i) = g_psi;
        else out.d_logit_psi += g_psi;
      }
      break;
    }
  }
  return out;
}

std::vector<Eigen::VectorXd> predictors_eta(const ModelSpec& model, const ModelData& data, const ConstrainedParams& cp) {
  std::vector<Eigen::VectorXd> eta;
  for (std::size_t p = 0; p < model.predictors.size(); ++p) {
    Eigen::VectorXd e = data.predictor_x[p] * cp.coef[p].beta;
    if (model.predictors[p].has_intercept) e.array() += cp.coef[p].intercept;
    if (const int c = model.re_index[p]; c >= 0)
      for (int i = 0; i < data.n_obs(); ++i) e(i) += cp.re.b(data.design.person_index[static_cast<std::size_t>(i)], c);
    eta.push_back(std::move(e));
  }
  return eta;
}

}  // namespace

double log_likelihood(std::span<const double> theta, const ModelSpec& model, const ModelData& data) {
  const auto cp = constrain(theta, model);
  const double logit_psi = model.scalar_psi ? theta[model.layout.at("logit_psi").offset] : 0.0;
  return likelihood(model, data, predictors_eta(model, data, cp), cp, logit_psi, false).value;
}

LogPosterior log_posterior(std::span<const double> theta, const ModelSpec& model, const ModelData& data) {
  const auto& lay = model.layout;
  LogPosterior out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lay.dim()));
  auto& grad = out.gradient;
  for (double t : theta)
    if (!std::isfinite(t)) {
      out.ok = false;
      out.value = -kInf;
      return out;
    }
  const auto cp = constrain(theta, model);
  const auto& pr = model.priors;
  double lp = 0.0;

  // coefficient priors (non-centred horseshoe, Student-t intercepts)
  for (std::size_t p = 0; p < model.predictors.size(); ++p) {
    const auto& s = model.predictors[p];
    const auto base = pname(s.param);
    if (s.has_intercept) {
      const auto& ib = lay.at(base + ".intercept");
      const auto st = student_t_lpdf(theta[ib.offset], pr.intercept);
      lp += st.value;
      grad(static_cast<Eigen::Index>(ib.offset)) += st.dx;
    }
    if (s.fixed_effect_columns.empty()) continue;
    const auto& zb = lay.at(base + ".hs_z");
    const auto& lb = lay.at(base + ".hs_log_lambda");
    const auto& tb = lay.at(base + ".hs_log_tau");
    const double tau = cp.horseshoe[p].tau;
    const auto hc_tau = half_cauchy_lpdf(tau, pr.horseshoe_global_scale);
    lp += hc_tau.value + theta[tb.offset];
    grad(static_cast<Eigen::Index>(tb.offset)) += hc_tau.dx * tau + 1.0;
    for (std::size_t j = 0; j < zb.length; ++j) {
      const double z = theta[zb.offset + j];
      const double lam = cp.horseshoe[p].lambda(static_cast<Eigen::Index>(j));
      const auto hc = half_cauchy_lpdf(lam, pr.horseshoe_local_scale);
      lp += hc.value + theta[lb.offset + j] - math::kHalfLog2Pi - 0.5 * z * z;
      grad(static_cast<Eigen::Index>(lb.offset + j)) += hc.dx * lam + 1.0;
      grad(static_cast<Eigen::Index>(zb.offset + j)) += -z;
    }
  }

  if (const auto* tb = lay.find("thresholds")) {
    for (std::size_t r = 0; r < tb->length; ++r) {
      const auto st = student_t_lpdf(theta[tb->offset + r], pr.threshold);
      lp += st.value;
      grad(static_cast<Eigen::Index>(tb->offset + r)) += st.dx;
    }
  }

  auto scale_prior = [&](const ParameterBlock& b, double value, const StudentT& t) {
    const auto ht = half_student_t_lpdf(value, t);
    lp += ht.value + theta[b.offset];
    grad(static_cast<Eigen::Index>(b.offset)) += ht.dx * value + 1.0;
  };
  if (model.scalar_phi) scale_prior(lay.at("log_phi"), cp.phi, pr.aux_scalar);
  if (model.scalar_alpha) scale_prior(lay.at("log_alpha"), cp.alpha, pr.aux_scalar);
  double logit_psi = 0.0;
  if (model.scalar_psi) {
    // Uniform(0,1) on psi: only the logit Jacobian.
    const auto& b = lay.at("logit_psi");
    logit_psi = theta[b.offset];
    lp += math::log_sigmoid(logit_psi) + math::log_sigmoid(-logit_psi);
    grad(static_cast<Eigen::Index>(b.offset)) += 1.0 - 2.0 * cp.psi;
  }

  const int k = model.n_re;
  std::optional<CorrCholesky> corr;
  if (k > 0) {
    const auto& sb = lay.at("re.log_sigma");
    for (int c = 0; c < k; ++c) scale_prior(ParameterBlock{"", sb.offset + static_cast<std::size_t>(c), 1},
                                            cp.re.sigma(c), pr.sd);
    if (k > 1) {
      const auto& cb = lay.at("re.corr");
      corr = corr_cholesky_transform(theta.subspan(cb.offset, cb.length), k, pr.lkj_eta);
      lp += corr->log_prior + corr->log_jacobian;
      for (std::size_t q = 0; q < cb.length; ++q)
        grad(static_cast<Eigen::Index>(cb.offset + q)) += corr->d_log_prior_jacobian(static_cast<Eigen::Index>(q));
    }
    const auto& zb = lay.at("re.z");
    for (std::size_t i = 0; i < zb.length; ++i) {
      const double z = theta[zb.offset + i];
      lp += -math::kHalfLog2Pi - 0.5 * z * z;
      grad(static_cast<Eigen::Index>(zb.offset + i)) += -z;
    }
  }

  // likelihood
  const auto eta = predictors_eta(model, data, cp);
  const auto lik = likelihood(model, data, eta, cp, logit_psi, true);
  lp += lik.value;

  if (const auto* tb = lay.find("thresholds"))
    grad.segment(static_cast<Eigen::Index>(tb->offset), static_cast<Eigen::Index>(tb->length)) += lik.d_thresholds;
  if (model.scalar_phi) grad(static_cast<Eigen::Index>(lay.at("log_phi").offset)) += lik.d_log_phi;
  if (model.scalar_alpha) grad(static_cast<Eigen::Index>(lay.at("log_alpha").offset)) += lik.d_log_alpha;
  if (model.scalar_psi) grad(static_cast<Eigen::Index>(lay.at("logit_psi").offset)) += lik.d_logit_psi;

  Eigen::MatrixXd d_b = Eigen::MatrixXd::Zero(model.n_persons, k);
  for (std::size_t p = 0; p < model.predictors.size(); ++p) {
    const auto& s = model.predictors[p];
    const auto base = pname(s.param);
    const auto& g = lik.d_eta[p];
    if (s.has_intercept) grad(static_cast<Eigen::Index>(lay.at(base + ".intercept").offset)) += g.sum();
    if (!s.fixed_effect_columns.empty()) {
      const Eigen::VectorXd d_beta = data.predictor_x[p].transpose() * g;
      const auto& zb = lay.at(base + ".hs_z");
      const auto& lb = lay.at(base + ".hs_log_lambda");
      const auto& tb = lay.at(base + ".hs_log_tau");
      const double tau = cp.horseshoe[p].tau;
      for (Eigen::Index j = 0; j < d_beta.size(); ++j) {
        const double lam = cp.horseshoe[p].lambda(j);
        const double bj = cp.coef[p].beta(j);
        grad(static_cast<Eigen::Index>(zb.offset) + j) += d_beta(j) * lam * tau;
        grad(static_cast<Eigen::Index>(lb.offset) + j) += d_beta(j) * bj;
        grad(static_cast<Eigen::Index>(tb.offset)) += d_beta(j) * bj;
      }
    }
    if (const int c = model.re_index[p]; c >= 0)
      for (int i = 0; i < data.n_obs(); ++i) d_b(data.design.person_index[static_cast<std::size_t>(i)], c) += g(i);
  }

  if (k > 0) {
    const auto& zb = lay.at("re.z");
    const auto& sb = lay.at("re.log_sigma");
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> z(
        theta.data() + zb.offset, model.n_persons, k);
    const Eigen::MatrixXd w = z * cp.re.corr_chol.transpose();
    for (int c = 0; c < k; ++c)
      grad(static_cast<Eigen::Index>(sb.offset) + c) += cp.re.sigma(c) * d_b.col(c).dot(w.col(c));
    const Eigen::MatrixXd d_w = d_b * cp.re.sigma.asDiagonal();
    const Eigen::MatrixXd d_z = d_w * cp.re.corr_chol;
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gz(
        grad.data() + zb.offset, model.n_persons, k);
    gz += d_z;
    if (k > 1) {
      const Eigen::MatrixXd d_L = d_w.transpose() * z;
      const auto& cb = lay.at("re.corr");
      for (std::size_t q = 0; q < cb.length; ++q)
        grad(static_cast<Eigen::Index>(cb.offset + q)) += (d_L.array() * corr->dL[q].array()).sum();
    }
  }

  out.value = lp;
  if (!std::isfinite(lp) || !grad.allFinite()) {
    out.ok = false;
    out.value = -kInf;
  }
  return out;
}

}  // namespace crb
