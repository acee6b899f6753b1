#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "crb/error.hpp"
#include "crb/math.hpp"
#include "crb/model.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace crb;

namespace {

struct Case {
  std::string name;
  Family family;
  std::vector<LinearPredictorSpec> specs;
};

std::vector<Case> all_cases(const DesignMatrix& dm) {
  const auto cols = test::all_columns(dm);
  auto spec = [&](DistParam p, bool re) { return LinearPredictorSpec{p, natural_link(p), cols, re, false}; };
  return {
      {"cratio", Family::CRatio, {spec(DistParam::Eta, true)}},
      {"binomial", Family::Binomial, {spec(DistParam::Pi, true)}},
      {"beta_bin pi", Family::BetaBinomial, {spec(DistParam::Pi, true)}},
      {"beta_bin pi phi", Family::BetaBinomial, {spec(DistParam::Pi, true), spec(DistParam::Phi, true)}},
      {"hurdle mu", Family::HurdleNB, {spec(DistParam::Mu, true)}},
      {"hurdle psi mu", Family::HurdleNB, {spec(DistParam::Psi, true), spec(DistParam::Mu, true)}},
      {"hurdle psi mu alpha", Family::HurdleNB,
       {spec(DistParam::Psi, true), spec(DistParam::Mu, true), spec(DistParam::Alpha, true)}},
      {"hurdle psi mu alpha, partial re", Family::HurdleNB,
       {spec(DistParam::Psi, true), spec(DistParam::Mu, false), spec(DistParam::Alpha, true)}},
  };
}

}  // namespace

TEST_CASE("assemble_model validates parameter sets") {
  const auto recs = test::random_records(4, 2, 28, 1);
  const auto dm = build_design(recs, test::small_schema());
  const auto cols = test::all_columns(dm);
  const IntervalLength n(28);
  auto spec = [&](DistParam p, bool re = true) { return LinearPredictorSpec{p, natural_link(p), cols, re, false}; };

  const auto cr = assemble_model(Family::CRatio, {spec(DistParam::Eta)}, dm, n);
  CHECK(cr.n_re == 1);
  CHECK_FALSE(cr.predictors[0].has_intercept);
  CHECK(cr.layout.at("thresholds").length == 28);

  const auto hn = assemble_model(Family::HurdleNB, {spec(DistParam::Mu), spec(DistParam::Psi)}, dm, n);
  CHECK(hn.n_re == 2);
  CHECK(hn.predictors[0].param == DistParam::Mu);
  CHECK(hn.scalar_alpha);
  CHECK_FALSE(hn.scalar_psi);
  CHECK(hn.layout.at("re.corr").length == 1);

  const auto bb = assemble_model(Family::BetaBinomial, {spec(DistParam::Pi)}, dm, n);
  CHECK(bb.n_re == 1);
  CHECK(bb.scalar_phi);

  CHECK_THROWS_AS(assemble_model(Family::CRatio, {spec(DistParam::Pi)}, dm, n), ConfigError);
  CHECK_THROWS_AS(assemble_model(Family::HurdleNB, {spec(DistParam::Mu), spec(DistParam::Alpha)}, dm, n), ConfigError);
  CHECK_THROWS_AS(assemble_model(Family::Binomial, {spec(DistParam::Pi), spec(DistParam::Pi)}, dm, n), ConfigError);
  auto bad_link = spec(DistParam::Pi);
  bad_link.link = Link::Log;
  CHECK_THROWS_AS(assemble_model(Family::Binomial, {bad_link}, dm, n), ConfigError);

  // blocks are disjoint and cover the vector
  std::size_t next = 0;
  for (const auto& b : hn.layout.blocks()) {
    CHECK(b.offset == next);
    next += b.length;
  }
  CHECK(next == hn.layout.dim());
}

TEST_CASE("log posterior gradient matches finite differences") {
  const auto recs = test::random_records(5, 3, 28, 2);
  const auto dm = build_design(recs, test::small_schema());
  const IntervalLength n(28);
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const auto& c : all_cases(dm)) {
    CAPTURE(c.name);
    const auto model = assemble_model(c.family, c.specs, dm, n);
    const auto data = ModelData::prepare(model, dm, test::days_of(recs));
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<double> theta(model.layout.dim());
      for (auto& t : theta) t = u(rng);
      const auto lp = log_posterior(theta, model, data);
      REQUIRE(lp.ok);
      const double h = 1e-3;
      const auto fd = test::fd_gradient5([&](const std::vector<double>& v) { return log_posterior(v, model, data).value; },
                                         theta, h);
      // Roundoff in the stencil grows with |lp| / h; far-tail draws can put lp near -1e9.
      const double noise = 10.0 * std::max(1.0, std::abs(lp.value)) * std::numeric_limits<double>::epsilon() / h;
      double worst = 0.0;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double err = std::abs(lp.gradient(static_cast<Eigen::Index>(i)) - fd[i]);
        worst = std::max(worst, err / (1e-6 * std::max(1.0, std::abs(fd[i])) + noise));
      }
      CHECK(worst < 1.0);
    }
  }
}

TEST_CASE("empty data gives the prior") {
  const auto recs = test::random_records(3, 2, 28, 3);
  const auto dm = build_design(recs, test::small_schema());
  DesignMatrix empty = dm;
  empty.rows.resize(0, dm.n_cols());
  empty.person_index.clear();
  const auto cols = test::all_columns(dm);
  const auto model = assemble_model(Family::HurdleNB,
                                    {{DistParam::Psi, Link::Logit, cols, true, false}, {DistParam::Mu, Link::Log, cols, true, false}},
                                    empty, IntervalLength(28));
  const auto data = ModelData::prepare(model, empty, {});
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> theta(model.layout.dim());
  for (auto& t : theta) t = u(rng);
  const auto cp = constrain(theta, model);
  const auto& pr = model.priors;
  const auto& lay = model.layout;
  double expected = 0.0;
  for (const char* base : {"mu", "psi"}) {
    const std::string b(base);
    expected += student_t_lpdf(theta[lay.at(b + ".intercept").offset], pr.intercept).value;
    const auto& zb = lay.at(b + ".hs_z");
    const auto& lb = lay.at(b + ".hs_log_lambda");
    const double log_tau = theta[lay.at(b + ".hs_log_tau").offset];
    expected += half_cauchy_lpdf(std::exp(log_tau), pr.horseshoe_global_scale).value + log_tau;
    for (std::size_t j = 0; j < zb.length; ++j) {
      expected += normal_lpdf(theta[zb.offset + j], 0.0, 1.0).value;
      expected += half_cauchy_lpdf(std::exp(theta[lb.offset + j]), pr.horseshoe_local_scale).value + theta[lb.offset + j];
    }
  }
  const double log_alpha = theta[lay.at("log_alpha").offset];
  expected += half_student_t_lpdf(std::exp(log_alpha), pr.aux_scalar).value + log_alpha;
  const auto& sb = lay.at("re.log_sigma");
  for (std::size_t c = 0; c < 2; ++c)
    expected += half_student_t_lpdf(std::exp(theta[sb.offset + c]), pr.sd).value + theta[sb.offset + c];
  const auto corr = corr_cholesky_transform({&theta[lay.at("re.corr").offset], 1}, 2, pr.lkj_eta);
  expected += lkj_cholesky_log_density(corr.L, pr.lkj_eta) + corr.log_jacobian;
  const auto& zb = lay.at("re.z");
  for (std::size_t i = 0; i < zb.length; ++i) expected += normal_lpdf(theta[zb.offset + i], 0.0, 1.0).value;
  CHECK(log_posterior(theta, model, data).value == doctest::Approx(expected).epsilon(1e-12));
  CHECK(log_likelihood(theta, model, data) == 0.0);
}

TEST_CASE("single cratio observation at zero") {
  DataSchema s;
  s.covariates.push_back({"x", {"a", "b"}, "a", {}});
  std::vector<ObservationRecord> r{{"p", "1", {{"x", "b"}}, 0}};
  const auto dm = build_design(r, s);
  const auto model = assemble_model(Family::CRatio, {{DistParam::Eta, Link::Logit, {0}, true, false}}, dm, IntervalLength(28));
  const auto data = ModelData::prepare(model, dm, {0});
  std::vector<double> theta(model.layout.dim(), 0.0);  // beta = 0 (z = 0), b = 0, thresholds 0
  CHECK(log_likelihood(theta, model, data) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  CHECK_THROWS_AS(ModelData::prepare(model, dm, {29}), DataError);
}

TEST_CASE("constrain builds non-centred person effects") {
  const auto recs = test::random_records(6, 2, 28, 5);
  const auto dm = build_design(recs, test::small_schema());
  const auto cols = test::all_columns(dm);
  SUBCASE("z = 0 gives b = 0") {
    const auto model = assemble_model(Family::CRatio, {{DistParam::Eta, Link::Logit, cols, true, false}}, dm, IntervalLength(28));
    std::vector<double> theta(model.layout.dim(), 0.3);
    const auto& zb = model.layout.at("re.z");
    for (std::size_t i = 0; i < zb.length; ++i) theta[zb.offset + i] = 0.0;
    CHECK(constrain(theta, model).re.b.isZero());
    // k = 1: b_i = sigma z_i
    for (std::size_t i = 0; i < zb.length; ++i) theta[zb.offset + i] = 0.1 * static_cast<double>(i) - 0.2;
    const auto cp = constrain(theta, model);
    for (std::size_t i = 0; i < zb.length; ++i)
      CHECK(cp.re.b(static_cast<Eigen::Index>(i), 0) == doctest::Approx(std::exp(0.3) * theta[zb.offset + i]).epsilon(1e-15));
  }
  SUBCASE("k = 2 exact factor form and sample covariance") {
    const auto model = assemble_model(Family::BetaBinomial,
                                      {{DistParam::Pi, Link::Logit, cols, true, false}, {DistParam::Phi, Link::Log, cols, true, false}},
                                      dm, IntervalLength(28));
    std::vector<double> theta(model.layout.dim(), 0.0);
    const auto& sb = model.layout.at("re.log_sigma");
    theta[sb.offset] = std::log(0.8);
    theta[sb.offset + 1] = std::log(1.5);
    theta[model.layout.at("re.corr").offset] = std::atanh(0.6);
    const auto& zb = model.layout.at("re.z");
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    const int reps = 20000;
    for (int rep = 0; rep < reps; ++rep) {
      for (std::size_t i = 0; i < zb.length; ++i) theta[zb.offset + i] = nd(rng);
      const auto cp = constrain(theta, model);
      for (int i = 0; i < model.n_persons; ++i) {
        const Eigen::Vector2d z(theta[zb.offset + 2 * static_cast<std::size_t>(i)], theta[zb.offset + 2 * static_cast<std::size_t>(i) + 1]);
        const Eigen::Vector2d expect = cp.re.sigma.asDiagonal() * (cp.re.corr_chol * z);
        CHECK_UNARY(std::abs(expect(0) - cp.re.b(i, 0)) + std::abs(expect(1) - cp.re.b(i, 1)) < 1e-15);
        cov += cp.re.b.row(i).transpose() * cp.re.b.row(i);
      }
    }
    cov /= reps * model.n_persons;
    const double s0 = 0.8, s1 = 1.5, rho = 0.6;
    const int m = reps * model.n_persons;
    CHECK(std::abs(cov(0, 0) - s0 * s0) < 4.0 * s0 * s0 * std::sqrt(2.0 / m));
    CHECK(std::abs(cov(1, 1) - s1 * s1) < 4.0 * s1 * s1 * std::sqrt(2.0 / m));
    CHECK(std::abs(cov(0, 1) - rho * s0 * s1) < 4.0 * s0 * s1 * std::sqrt((1.0 + rho * rho) / m));
  }
}

TEST_CASE("observation params and population summary") {
  const auto recs = test::random_records(4, 2, 28, 6);
  const auto dm = build_design(recs, test::small_schema());
  const auto cols = test::all_columns(dm);
  const auto model = assemble_model(Family::HurdleNB, {{DistParam::Mu, Link::Log, cols, true, false}}, dm, IntervalLength(28));
  const auto data = ModelData::prepare(model, dm, test::days_of(recs));
  std::vector<double> theta(model.layout.dim(), 0.1);
  const auto cp = constrain(theta, model);
  const auto params = observation_params(model, cp, data);
  REQUIRE(params.size() == recs.size());
  double ll = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) ll += family_log_pmf(params[i], data.days[i], model.n_days);
  CHECK(ll == doctest::Approx(log_likelihood(theta, model, data)).epsilon(1e-12));
  const auto summary = population_summary(model, cp);
  CHECK(summary.front().name == "Intercept");
  CHECK(summary[1].name == "wave:2");
  bool has_psi = false;
  for (const auto& s : summary) has_psi |= s.name == "psi";
  CHECK(has_psi);
  CHECK(data.fingerprint() == ModelData::prepare(model, dm, test::days_of(recs)).fingerprint());
}
