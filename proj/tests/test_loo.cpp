#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "crb/error.hpp"
#include "crb/loo.hpp"
#include "fixtures.hpp"

using namespace crb;

namespace {

double log_binom_pmf(int y, int n, double p) {
  return std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0) + y * std::log(p) +
         (n - y) * std::log1p(-p);
}

// log p(y | Beta(a, b), n) for the beta-binomial predictive.
double log_betabin(int y, int n, double a, double b) {
  auto lbeta = [](double x, double z) { return std::lgamma(x) + std::lgamma(z) - std::lgamma(x + z); };
  return std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0) + lbeta(y + a, n - y + b) - lbeta(a, b);
}

}  // namespace

TEST_CASE("parameter-free likelihood gives p_loo 0 and undefined k") {
  Eigen::MatrixXd ll(200, 3);
  for (int i = 0; i < 3; ++i) ll.col(i).setConstant(-1.5 - i);
  std::vector<int> chains(200);
  for (int r = 0; r < 200; ++r) chains[static_cast<std::size_t>(r)] = r / 50;
  const auto res = psis_loo(ll, chains);
  for (int i = 0; i < 3; ++i) {
    CHECK(res.pointwise_elpd[static_cast<std::size_t>(i)] == doctest::Approx(-1.5 - i).epsilon(1e-14));
    CHECK(res.k_class[static_cast<std::size_t>(i)] == ParetoK::Undefined);
  }
  CHECK(res.p_loo == doctest::Approx(0.0));
  CHECK(res.count(ParetoK::Undefined) == 3);
}

TEST_CASE("PSIS-LOO matches exact refit LOO on a conjugate binomial problem") {
  const int trials = 10;
  const std::vector<int> y = {2, 5, 3, 9, 4, 1, 6, 3};
  int sum = 0;
  for (int v : y) sum += v;
  const int n = static_cast<int>(y.size());
  // Exact LOO: posterior of p without y_i is Beta(1 + sum - y_i, 1 + trials (n - 1) - (sum - y_i)).
  double exact = 0.0;
  for (int v : y) exact += log_betabin(v, trials, 1.0 + sum - v, 1.0 + trials * (n - 1) - (sum - v));

  std::mt19937_64 rng(1);
  std::gamma_distribution<double> ga(1.0 + sum, 1.0), gb(1.0 + trials * n - sum, 1.0);
  const int s = 4000;
  Eigen::MatrixXd ll(s, n);
  std::vector<int> chains(s);
  for (int r = 0; r < s; ++r) {
    const double a = ga(rng), b = gb(rng);
    const double p = a / (a + b);
    for (int i = 0; i < n; ++i) ll(r, i) = log_binom_pmf(y[static_cast<std::size_t>(i)], trials, p);
    chains[static_cast<std::size_t>(r)] = r / 1000;
  }
  const auto res = psis_loo(ll, chains);
  CHECK(std::abs(res.elpd_loo - exact) < 0.3);
  CHECK(res.p_loo >= -3.0 * res.se_p_loo);
  CHECK(res.looic == -2.0 * res.elpd_loo);
  CHECK(res.se_looic == 2.0 * res.se_elpd_loo);
  CHECK(res.elpd_loo <= res.lpd);
  for (auto k : res.pareto_k) CHECK(k < 0.7);
}

TEST_CASE("generalized Pareto tail fit recovers k") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double k = 0.4, sigma = 1.0;
  std::vector<double> x(10000);
  for (auto& v : x) v = gpd_quantile(u(rng), k, sigma);
  std::sort(x.begin(), x.end());
  const auto fit = gpd_fit(x);
  CHECK(std::abs(fit.k - k) < 0.1);
  CHECK(fit.sigma == doctest::Approx(sigma).epsilon(0.1));
}

TEST_CASE("Pareto k unchanged by a constant shift of the log ratios") {
  std::mt19937_64 rng(3);
  std::student_t_distribution<double> t(3.0);
  std::vector<double> lr(1000);
  for (auto& v : lr) v = t(rng);
  auto shifted = lr;
  for (auto& v : shifted) v += 12.5;
  const auto a = psis(lr, 1.0), b = psis(shifted, 1.0);
  CHECK(a.k == doctest::Approx(b.k).epsilon(1e-9));
  double total = 0.0;
  for (double w : a.log_weights) total += std::exp(w);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tail tied with the cutoff keeps finite weights") {
  // Stuck draws repeat values; here ten tail draws equal the cutoff exactly.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> lr;
  for (int i = 0; i < 150; ++i) lr.push_back(u(rng));
  for (int i = 0; i < 20; ++i) lr.push_back(2.0);
  for (int i = 0; i < 30; ++i) lr.push_back(2.0 + u(rng));
  const auto w = psis(lr, 1.0);
  double total = 0.0;
  for (double v : w.log_weights) {
    CHECK(std::isfinite(v));
    total += std::exp(v);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::MatrixXd ll(200, 1);
  for (int r = 0; r < 200; ++r) ll(r, 0) = -lr[static_cast<std::size_t>(r)];
  CHECK(std::isfinite(psis_loo(ll, {}).elpd_loo));
}

TEST_CASE("k classification thresholds") {
  CHECK(classify_k(0.3) == ParetoK::Good);
  CHECK(classify_k(0.5) == ParetoK::Ok);
  CHECK(classify_k(0.7) == ParetoK::Bad);
  CHECK(classify_k(std::nan("")) == ParetoK::Undefined);
}

TEST_CASE("model comparison table") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  auto make = [&](double shift) {
    Eigen::MatrixXd ll(300, 20);
    for (Eigen::Index r = 0; r < ll.rows(); ++r)
      for (Eigen::Index i = 0; i < ll.cols(); ++i) ll(r, i) = -2.0 - shift + 0.1 * z(rng);
    return psis_loo(ll, {});
  };
  const auto a = make(0.0), b = make(0.5);
  const auto one = compare({{"a", a}});
  REQUIRE(one.size() == 1);
  CHECK(one[0].elpd_diff == 0.0);

  const auto dup = compare({{"x", a}, {"y", a}});
  CHECK(dup[1].elpd_diff == 0.0);
  CHECK(dup[1].se_diff == 0.0);
  CHECK(dup[0].loo.looic == dup[1].loo.looic);

  const auto ab = compare({{"a", a}, {"b", b}});
  const auto ba = compare({{"b", b}, {"a", a}});
  CHECK(ab[0].model == "a");
  CHECK(ba[0].model == "a");
  CHECK(ab[1].elpd_diff == ba[1].elpd_diff);
  CHECK(ab[1].elpd_diff < 0.0);

  auto c = b;
  c.fingerprint = 7;
  CHECK_THROWS_AS(compare({{"a", a}, {"c", c}}), DataError);
}

TEST_CASE("pointwise log-likelihood agrees with the posterior's likelihood term") {
  const auto recs = test::random_records(6, 3, 28, 5);
  const auto dm = build_design(recs, test::small_schema());
  const auto cols = test::all_columns(dm);
  const auto model = assemble_model(Family::BetaBinomial,
                                    {{DistParam::Pi, Link::Logit, cols, true, true}, {DistParam::Phi, Link::Log, cols, true, true}},
                                    dm, IntervalLength(28));
  auto data = ModelData::prepare(model, dm, test::days_of(recs));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PosteriorDraws fit;
  fit.draws.resize(5, static_cast<Eigen::Index>(model.layout.dim()));
  for (Eigen::Index r = 0; r < 5; ++r)
    for (Eigen::Index j = 0; j < fit.draws.cols(); ++j) fit.draws(r, j) = u(rng);
  fit.chain_id.assign(5, 0);
  fit.chains.resize(1);
  const auto pl = pointwise_loglik(fit, model, data);
  for (Eigen::Index r = 0; r < 5; ++r) {
    std::vector<double> theta(static_cast<std::size_t>(fit.draws.cols()));
    for (Eigen::Index j = 0; j < fit.draws.cols(); ++j) theta[static_cast<std::size_t>(j)] = fit.draws(r, j);
    CHECK(pl.ll.row(r).sum() == doctest::Approx(log_likelihood(theta, model, data)).epsilon(1e-10));
  }
  data.days[2] = 29;
  try {
    pointwise_loglik(fit, model, data);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
}

TEST_CASE("cratio zero count at eta equal to the first threshold") {
  const auto recs = test::random_records(2, 1, 28, 6);
  const auto dm = build_design(recs, test::small_schema());
  const auto model = assemble_model(Family::CRatio, {{DistParam::Eta, Link::Logit, test::all_columns(dm), false, false}},
                                    dm, IntervalLength(28));
  std::vector<int> days(recs.size(), 0);
  const auto data = ModelData::prepare(model, dm, days);
  PosteriorDraws fit;
  fit.draws = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(model.layout.dim()));
  fit.chain_id = {0};
  fit.chains.resize(1);
  const auto pl = pointwise_loglik(fit, model, data);
  for (Eigen::Index i = 0; i < pl.ll.cols(); ++i) CHECK(pl.ll(0, i) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
}
