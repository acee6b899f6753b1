#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "crb/error.hpp"
#include "crb/regression.hpp"

using namespace crb;

namespace {

ObservationRecord rec(std::string person, std::string wave, std::map<std::string, std::string> cov, int days = 0) {
  return {std::move(person), std::move(wave), std::move(cov), days};
}

DataSchema survey_schema() {
  DataSchema s;
  s.covariates.push_back({"wave", {"1", "2", "3", "4"}, "1", {}});
  s.covariates.push_back({"isolation", {"no", "yes"}, "no", {}});
  s.covariates.push_back({"gender", {"male", "female", "non-binary"}, "male", {}});
  return s;
}

}  // namespace

TEST_CASE("binary covariate design") {
  DataSchema s;
  s.covariates.push_back({"iso", {"no", "yes"}, "no", {}});
  std::vector<ObservationRecord> r{rec("A", "1", {{"iso", "yes"}}), rec("B", "1", {{"iso", "no"}}),
                                   rec("A", "2", {{"iso", "yes"}})};
  const auto dm = build_design(r, s);
  CHECK(dm.n_obs() == 3);
  CHECK(dm.n_cols() == 1);
  CHECK(dm.column_names[0] == "iso:yes");
  CHECK(dm.rows(0, 0) == 1.0);
  CHECK(dm.rows(1, 0) == 0.0);
  CHECK(dm.person_index == std::vector<int>{0, 1, 0});
  CHECK(dm.n_persons() == 2);
}

TEST_CASE("multi-level covariates use reference-cell coding") {
  const auto s = survey_schema();
  std::vector<ObservationRecord> r{rec("p", "3", {{"wave", "3"}, {"isolation", "no"}, {"gender", "non-binary"}})};
  const auto dm = build_design(r, s);
  CHECK(dm.column_names == std::vector<std::string>{"wave:2", "wave:3", "wave:4", "isolation:yes", "gender:female",
                                                    "gender:non-binary"});
  CHECK(dm.rows.row(0).sum() == 2.0);
  CHECK(dm.rows(0, dm.column("wave:3")) == 1.0);
  CHECK(dm.rows(0, dm.column("gender:non-binary")) == 1.0);
  CHECK(dm.column("wave:1") == -1);
}

TEST_CASE("schema errors") {
  const auto s = survey_schema();
  std::vector<ObservationRecord> bad{rec("p", "1", {{"wave", "5"}, {"isolation", "no"}, {"gender", "male"}})};
  CHECK_THROWS_WITH_AS(build_design(bad, s), doctest::Contains("record 1"), DataError);
  std::vector<ObservationRecord> missing{rec("p", "1", {{"wave", "1"}, {"gender", "male"}})};
  CHECK_THROWS_AS(build_design(missing, s), DataError);
  CHECK(drop_incomplete(missing, s) == 1);
  CHECK(missing.empty());
}

TEST_CASE("recodes merge levels before coding") {
  DataSchema s;
  s.covariates.push_back({"state", {"NSW", "VIC", "SA"}, "", {{"TAS", "VIC"}, {"NT", "SA"}, {"ACT", "NSW"}}});
  std::vector<ObservationRecord> r{rec("a", "1", {{"state", "TAS"}}), rec("b", "1", {{"state", "ACT"}})};
  apply_recodes(r, s);
  const auto dm = build_design(r, s);
  CHECK(dm.rows(0, dm.column("state:VIC")) == 1.0);
  CHECK(dm.rows.row(1).sum() == 0.0);
}

TEST_CASE("canonical sort makes the design order-independent") {
  const auto s = survey_schema();
  std::vector<ObservationRecord> r;
  std::mt19937_64 rng(3);
  const char* waves[] = {"1", "2", "3", "4"};
  const char* genders[] = {"male", "female", "non-binary"};
  for (int p = 0; p < 10; ++p)
    for (int w = 0; w < 4; ++w)
      r.push_back(rec("id" + std::to_string(p), waves[w],
                      {{"wave", waves[w]}, {"isolation", rng() % 2 ? "yes" : "no"}, {"gender", genders[p % 3]}}));
  auto a = r;
  auto b = r;
  std::shuffle(b.begin(), b.end(), rng);
  canonical_sort(a);
  canonical_sort(b);
  const auto da = build_design(a, s);
  const auto db = build_design(b, s);
  CHECK(da.rows == db.rows);
  CHECK(da.person_index == db.person_index);
  CHECK(da.person_ids == db.person_ids);
}

TEST_CASE("link functions") {
  CHECK(link_inverse(0.0, Link::Logit) == 0.5);
  CHECK(link_inverse(0.0, Link::Log) == 1.0);
  CHECK(link_inverse(-3.0, Link::Identity) == -3.0);
  CHECK(link_inverse(-40.0, Link::Logit) > 0.0);
  for (double eta = -30.0; eta <= 30.0; eta += 0.25) {
    // 1 - sigmoid(eta) keeps about -log10(ulp(1) e^eta) digits for eta > 0.
    const double bound = std::max(1e-10, 4.0 * std::numeric_limits<double>::epsilon() * std::exp(eta));
    CHECK(std::abs(link_apply(link_inverse(eta, Link::Logit), Link::Logit) - eta) < bound);
    if (eta <= 13.0) CHECK(std::abs(link_apply(link_inverse(eta, Link::Logit), Link::Logit) - eta) < 1e-10);
    CHECK(std::abs(link_apply(link_inverse(eta, Link::Log), Link::Log) - eta) < 1e-10);
  }
}

TEST_CASE("linear predictor") {
  const auto s = survey_schema();
  std::vector<ObservationRecord> r;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  const char* waves[] = {"1", "2", "3", "4"};
  const char* genders[] = {"male", "female", "non-binary"};
  for (int i = 0; i < 30; ++i)
    r.push_back(rec("id" + std::to_string(i % 7), waves[i % 4],
                    {{"wave", waves[i % 4]}, {"isolation", i % 3 ? "yes" : "no"}, {"gender", genders[i % 3]}}));
  const auto dm = build_design(r, s);
  LinearPredictorSpec spec;
  for (int c = 0; c < dm.n_cols(); ++c) spec.fixed_effect_columns.push_back(c);
  spec.has_random_intercept = true;
  RandomEffectsBlock re{Eigen::MatrixXd::Zero(dm.n_persons(), 1), Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Identity(1, 1)};
  CoefficientVector coef{0.0, Eigen::VectorXd::Zero(dm.n_cols())};

  CHECK(linear_predictor(dm, coef, re, 0, spec).isZero());

  for (int rep = 0; rep < 5; ++rep) {
    for (int j = 0; j < dm.n_cols(); ++j) coef.beta(j) = nd(rng);
    for (int i = 0; i < dm.n_persons(); ++i) re.b(i, 0) = nd(rng);
    const auto eta = linear_predictor(dm, coef, re, 0, spec);
    for (int i = 0; i < dm.n_obs(); ++i) {
      double naive = re.b(dm.person_index[static_cast<std::size_t>(i)], 0);
      for (int j = 0; j < dm.n_cols(); ++j) naive += dm.rows(i, j) * coef.beta(j);
      CHECK(std::abs(eta(i) - naive) < 1e-14);
    }
  }

  // linearity with b = 0
  re.b.setZero();
  CoefficientVector c1{0.0, Eigen::VectorXd::Random(dm.n_cols())};
  CoefficientVector c2{0.0, Eigen::VectorXd::Random(dm.n_cols())};
  CoefficientVector c12{0.0, c1.beta + c2.beta};
  const Eigen::VectorXd lhs = linear_predictor(dm, c12, re, 0, spec);
  const Eigen::VectorXd rhs = linear_predictor(dm, c1, re, 0, spec) + linear_predictor(dm, c2, re, 0, spec);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

  CoefficientVector wrong{0.0, Eigen::VectorXd::Zero(2)};
  CHECK_THROWS_AS(linear_predictor(dm, wrong, re, 0, spec), std::logic_error);
}

TEST_CASE("single column predictor with random intercept") {
  DataSchema s;
  s.covariates.push_back({"x", {"a", "b"}, "a", {}});
  std::vector<ObservationRecord> r{rec("p", "1", {{"x", "b"}})};
  const auto dm = build_design(r, s);
  LinearPredictorSpec spec{DistParam::Eta, Link::Logit, {0}, true, false};
  RandomEffectsBlock re{Eigen::MatrixXd::Constant(1, 1, -0.5), Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Identity(1, 1)};
  CoefficientVector coef{0.0, Eigen::VectorXd::Constant(1, 1.5)};
  CHECK(linear_predictor(dm, coef, re, 0, spec)(0) == doctest::Approx(1.0));
}
