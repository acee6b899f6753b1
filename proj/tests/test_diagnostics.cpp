#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "crb/diagnostics.hpp"
#include "crb/error.hpp"
#include "crb/math.hpp"
#include "fixtures.hpp"

using namespace crb;

namespace {

ChainDraws normal_chains(int m, int n, std::uint64_t seed, std::vector<double> shifts = {}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  ChainDraws out(static_cast<std::size_t>(m));
  for (int c = 0; c < m; ++c)
    for (int i = 0; i < n; ++i)
      out[static_cast<std::size_t>(c)].push_back(z(rng) + (shifts.empty() ? 0.0 : shifts[static_cast<std::size_t>(c)]));
  return out;
}

// Posterior with a single retained draw at theta.
PosteriorDraws single_draw(const std::vector<double>& theta, int copies = 1) {
  PosteriorDraws d;
  d.draws.resize(copies, static_cast<Eigen::Index>(theta.size()));
  for (int r = 0; r < copies; ++r)
    for (std::size_t j = 0; j < theta.size(); ++j) d.draws(r, static_cast<Eigen::Index>(j)) = theta[j];
  d.chain_id.assign(static_cast<std::size_t>(copies), 0);
  d.chains.resize(1);
  return d;
}

struct Fixture {
  std::vector<ObservationRecord> recs = test::random_records(10, 3, 28, 11);
  DesignMatrix dm = build_design(recs, test::small_schema());
  std::vector<int> cols = test::all_columns(dm);
};

}  // namespace

TEST_CASE("rank R-hat on well-mixed and shifted chains") {
  CHECK(*rank_rhat(normal_chains(4, 900, 1)) < 1.01);
  CHECK(*rank_rhat(normal_chains(4, 900, 2, {0, 0, 0, 5})) > 1.5);
}

TEST_CASE("rank R-hat symmetric in chains and invariant to affine maps") {
  auto ch = normal_chains(4, 200, 3, {0, 0.1, 0.2, 0.0});
  const double r = *rank_rhat(ch);
  ChainDraws perm = {ch[2], ch[0], ch[3], ch[1]};
  CHECK(*rank_rhat(perm) == doctest::Approx(r).epsilon(1e-14));
  auto aff = ch;
  for (auto& c : aff)
    for (auto& v : c) v = 3.0 * v - 7.0;
  CHECK(*rank_rhat(aff) == doctest::Approx(r).epsilon(1e-12));
}

TEST_CASE("R-hat undefined cases are flagged") {
  ChainDraws constant(4, std::vector<double>(100, 2.5));
  CHECK_FALSE(rank_rhat(constant).has_value());
  CHECK_FALSE(ess_bulk(constant).has_value());
  CHECK_FALSE(rank_rhat(normal_chains(1, 100, 4)).has_value());
  CHECK_FALSE(rank_rhat(normal_chains(2, 3, 4)).has_value());
}

TEST_CASE("ESS against independent and AR(1) oracles") {
  const auto iid = normal_chains(4, 1000, 5);
  CHECK(*ess_bulk(iid) == doctest::Approx(4000).epsilon(0.15));
  CHECK(*ess_tail(iid) == doctest::Approx(4000).epsilon(0.25));
  // AR(1) with coefficient 0.5: integrated autocorrelation time (1 + a) / (1 - a) = 3.
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z;
  ChainDraws ar(4);
  for (auto& c : ar) {
    double x = z(rng) / std::sqrt(1 - 0.25);
    for (int i = 0; i < 5000; ++i) {
      x = 0.5 * x + z(rng);
      c.push_back(x);
    }
  }
  CHECK(*ess_basic(ar) == doctest::Approx(20000.0 / 3.0).epsilon(0.15));
  CHECK(*ess_bulk(ar) == doctest::Approx(20000.0 / 3.0).epsilon(0.15));
}

TEST_CASE("degenerate cratio posterior predicts all zeros") {
  Fixture f;
  const auto model = assemble_model(Family::CRatio, {{DistParam::Eta, Link::Logit, f.cols, false, false}}, f.dm,
                                    IntervalLength(28));
  const auto data = ModelData::prepare(model, f.dm, test::days_of(f.recs));
  std::vector<double> theta(model.layout.dim(), 0.0);
  const auto& th = model.layout.at("thresholds");
  for (std::size_t i = 0; i < th.length; ++i) theta[th.offset + i] = 100.0;
  const auto fit = single_draw(theta);
  Rng rng(1);
  const auto rep = posterior_predict(fit, model, data, 1, rng);
  REQUIRE(rep.y_rep.size() == 1);
  for (int y : rep.y_rep[0]) CHECK(y == 0);
  const auto sums = numeric_summaries(fit, model, data);
  for (const auto& s : sums) {
    CHECK(s.mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.q05 == 0);
    CHECK(s.q50 == 0);
    CHECK(s.q95 == 0);
  }
  CHECK_THROWS_AS(posterior_predict(fit, model, data, 2, rng), ConfigError);
}

TEST_CASE("binomial replicates stay in support and centre on 14") {
  Fixture f;
  const auto model = assemble_model(Family::Binomial, {{DistParam::Pi, Link::Logit, f.cols, false, true}}, f.dm,
                                    IntervalLength(28));
  const auto data = ModelData::prepare(model, f.dm, test::days_of(f.recs));
  std::vector<double> theta(model.layout.dim(), 0.0);  // z = 0 so beta = 0, intercept 0 so pi = 0.5
  const auto fit = single_draw(theta, 40);
  Rng rng(2);
  const auto rep = posterior_predict(fit, model, data, 40, rng);
  for (const auto& y : rep.y_rep)
    for (int v : y) CHECK((v >= 0 && v <= 28));
  for (const auto& s : numeric_summaries(fit, model, data)) {
    CHECK(s.mean == doctest::Approx(14.0).epsilon(1e-12));
    CHECK(s.variance == doctest::Approx(7.0).epsilon(1e-12));
    CHECK(s.q50 == 14);
  }
  // Fixed seed reproduces the replicates.
  Rng rng2(2);
  CHECK(posterior_predict(fit, model, data, 40, rng2).y_rep == rep.y_rep);
}

TEST_CASE("hurdle replicates can overflow the interval") {
  Fixture f;
  const auto model = assemble_model(Family::HurdleNB, {{DistParam::Mu, Link::Log, f.cols, false, true}}, f.dm,
                                    IntervalLength(28));
  const auto data = ModelData::prepare(model, f.dm, test::days_of(f.recs));
  std::vector<double> theta(model.layout.dim(), 0.0);
  theta[model.layout.at("mu.intercept").offset] = std::log(40.0);
  const auto fit = single_draw(theta, 5);
  Rng rng(3);
  const auto rep = posterior_predict(fit, model, data, 5, rng);
  const CountSupport support{28, true};
  bool over = false;
  for (const auto& y : rep.y_rep)
    for (int v : y) over = over || v > 28;
  CHECK(over);
  const auto rows = rootogram_check(data.days, rep, support);
  REQUIRE(rows.size() == 30);
  CHECK(rows.back().count == ">28");
  CHECK(rows.back().sqrt_expected > 0.0);
  const auto e = ecdf_check(data.days, rep, support);
  for (const auto& r : e.curves[0].replicates) {
    CHECK(r.back() == 1.0);
    CHECK(r[28] < 1.0);
  }
  CHECK_THROWS_AS(rootogram_check(std::vector<int>{30}, rep, CountSupport{28, false}), DataError);
}

TEST_CASE("ECDF of a small sample") {
  const CountSupport s{28, false};
  const auto e = ecdf(std::vector<int>{0, 0, 28}, s);
  REQUIRE(e.size() == 29);
  for (int d = 0; d < 28; ++d) CHECK(e[static_cast<std::size_t>(d)] == doctest::Approx(2.0 / 3.0));
  CHECK(e[28] == 1.0);
}

TEST_CASE("ECDFs are non-decreasing and end at one, per group") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> u(0, 28);
  std::vector<int> obs(60);
  std::vector<std::string> wave(60);
  for (std::size_t i = 0; i < 60; ++i) {
    obs[i] = u(rng);
    wave[i] = std::to_string(i % 3 + 1);
  }
  PredictiveDrawSet rep;
  for (int k = 0; k < 5; ++k) {
    std::vector<int> y(60);
    for (auto& v : y) v = u(rng);
    rep.y_rep.push_back(y);
    rep.draw_index.push_back(k);
  }
  const auto chk = ecdf_check(obs, rep, CountSupport{28, false}, &wave);
  REQUIRE(chk.curves.size() == 3);
  CHECK(chk.curves[0].group == "1");
  for (const auto& c : chk.curves) {
    CHECK(c.n_obs == 20);
    std::vector<std::vector<double>> all = c.replicates;
    all.push_back(c.observed);
    for (const auto& v : all) {
      for (std::size_t i = 1; i < v.size(); ++i) CHECK(v[i] >= v[i - 1]);
      CHECK(v.back() == 1.0);
    }
  }
}

TEST_CASE("group levels sort numerically when possible") {
  CHECK(group_levels({"10", "2", "1", "2"}) == std::vector<std::string>{"1", "2", "10"});
  CHECK(group_levels({"b", "a", "b"}) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("rootogram residual conventions") {
  std::vector<int> obs = {3, 3, 5};
  PredictiveDrawSet same{{0}, {obs}};
  for (const auto& r : rootogram_check(obs, same, CountSupport{5, false})) CHECK(r.residual == 0.0);

  std::vector<int> nine(9, 2);
  PredictiveDrawSet four{{0}, {std::vector<int>{2, 2, 2, 2, 0, 0, 0, 0, 0}}};
  const auto rows = rootogram_check(nine, four, CountSupport{5, false});
  CHECK(rows[2].sqrt_observed == doctest::Approx(3.0));
  CHECK(rows[2].sqrt_expected == doctest::Approx(2.0));
  CHECK(rows[2].residual == doctest::Approx(-1.0));
}

TEST_CASE("SD check conventions") {
  std::vector<int> obs = {4, 4, 4, 4, 1, 9};
  std::vector<std::string> g = {"1", "1", "2", "2", "3", "4"};
  PredictiveDrawSet rep{{0, 1, 2}, {obs, obs, obs}};
  const auto sd = sd_check(obs, rep, g);
  REQUIRE(sd.size() == 2);  // singleton groups 3 and 4 excluded
  for (const auto& s : sd) {
    CHECK(s.observed_sd == 0.0);
    for (double r : s.replicate_sd) CHECK(r == s.observed_sd);
  }
  std::vector<int> v = {1, 2, 3, 4};
  PredictiveDrawSet r2{{0, 1}, {v, v}};
  const auto sd2 = sd_check(v, r2, {"a", "a", "a", "a"});
  CHECK(sd2[0].observed_sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(sd2[0].replicate_sd == std::vector<double>(2, sd2[0].observed_sd));
}

TEST_CASE("numeric summaries match an independent pmf summation and sampling") {
  Fixture f;
  const auto model = assemble_model(Family::CRatio, {{DistParam::Eta, Link::Logit, f.cols, true, false}}, f.dm,
                                    IntervalLength(28));
  const auto data = ModelData::prepare(model, f.dm, test::days_of(f.recs));
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> theta(model.layout.dim());
  for (auto& t : theta) t = u(rng);
  const auto fit = single_draw(theta);
  const auto sums = numeric_summaries(fit, model, data);
  const auto params = draw_params(fit, 0, model, data);
  Rng srng(9);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& p = std::get<CRatioParams>(params[i]);
    // Sequential-product pmf, written out independently.
    double survive = 1.0, mean = 0.0;
    for (int d = 0; d <= 28; ++d) {
      const double stop = d < 28 ? 1.0 / (1.0 + std::exp(p.eta - p.thresholds[static_cast<std::size_t>(d)])) : 1.0;
      mean += d * survive * stop;
      survive *= 1.0 - stop;
    }
    CHECK(sums[i].mean == doctest::Approx(mean).epsilon(1e-12));
    const int n = 100000;
    double s = 0.0, s2 = 0.0;
    for (int k = 0; k < n; ++k) {
      const double y = cratio_sample(p, IntervalLength(28), srng);
      s += y;
      s2 += y * y;
    }
    const double mc = s / n;
    const double se = std::sqrt((s2 / n - mc * mc) / n);
    CHECK(std::abs(mc - sums[i].mean) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("odds ratio summaries") {
  std::vector<double> ln2(100, std::log(2.0));
  const auto o = odds_ratio("x", ln2);
  CHECK(o.median == doctest::Approx(2.0));
  CHECK(o.q05 == doctest::Approx(2.0));
  CHECK(o.q95 == doctest::Approx(2.0));
  CHECK(o.formatted() == "2.00 (2.00, 2.00)");
  std::vector<double> sym = {-1.0, -0.5, 0.0, 0.5, 1.0};
  CHECK(odds_ratio("y", sym).median == doctest::Approx(1.0));
  OddsRatio sample_or{"z", 0.654, 0, 0, 0.5149, 0.8149};
  CHECK(sample_or.formatted() == "0.65 (0.51, 0.81)");
}

TEST_CASE("odds ratio summary by coefficient name") {
  Fixture f;
  const auto model = assemble_model(Family::Binomial, {{DistParam::Pi, Link::Logit, f.cols, false, true}}, f.dm,
                                    IntervalLength(28));
  std::vector<double> theta(model.layout.dim(), 0.0);
  const auto& z = model.layout.at("pi.hs_z");
  theta[z.offset] = 1.0;  // beta_0 = 1 * lambda * tau = 1 at unit scales
  const auto fit = single_draw(theta, 3);
  const auto names = coefficient_names(model);
  REQUIRE(!names.empty());
  const auto ors = odds_ratio_summary(fit, model, {names[0]});
  CHECK(ors[0].median == doctest::Approx(std::exp(1.0)));
  try {
    odds_ratio_summary(fit, model, {"nope"});
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(names[0]) != std::string::npos);
  }
}

TEST_CASE("spread draws cover the chains evenly") {
  CHECK(spread_draws(3600, 4) == std::vector<int>{450, 1350, 2250, 3150});
  CHECK(spread_draws(10, 20).size() == 10);
}

TEST_CASE("convergence report rows") {
  PosteriorDraws d;
  const auto ch = normal_chains(4, 100, 10);
  d.draws.resize(400, 1);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 100; ++i) {
      d.draws(c * 100 + i, 0) = ch[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
      d.chain_id.push_back(c);
    }
  d.chains.resize(4);
  d.names = {"x"};
  const auto rows = convergence_report(d);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].name == "x");
  CHECK(rows[0].rhat.has_value());
  CHECK(rows[0].q05 < rows[0].q50);
}
