#pragma once

// Design matrices, link functions and linear predictors with a person-level
// random intercept: eta = x beta (+ intercept) + b[person].

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crb/families.hpp"

namespace crb {

struct ObservationRecord {
  std::string person_id;
  std::string wave;
  std::map<std::string, std::string> covariates;
  int days = 0;
};

// A categorical covariate. levels are in declaration order; the reference
// level contributes no design column.
struct CovariateDecl {
  std::string name;
  std::vector<std::string> levels;
  std::string reference;  // empty = first level
  std::map<std::string, std::string> recode;

  const std::string& reference_level() const { return reference.empty() ? levels.front() : reference; }
};

struct DataSchema {
  std::vector<CovariateDecl> covariates;
};

struct DesignMatrix {
  Eigen::MatrixXd rows;  // n_obs x p, reference-cell dummies
  std::vector<std::string> column_names;
  std::vector<int> person_index;
  std::vector<std::string> person_ids;  // dense index -> original id

  int n_obs() const { return static_cast<int>(rows.rows()); }
  int n_cols() const { return static_cast<int>(rows.cols()); }
  int n_persons() const { return static_cast<int>(person_ids.size()); }
  int column(const std::string& name) const;  // -1 when absent
};

enum class Link { Logit, Log, Identity };

std::string_view link_name(Link l);
Link parse_link(std::string_view s);
double link_inverse(double eta, Link link);
double link_apply(double value, Link link);

// Distributional parameters that can carry a linear predictor.
enum class DistParam { Eta, Pi, Phi, Psi, Mu, Alpha };

std::string_view dist_param_name(DistParam p);
DistParam parse_dist_param(std::string_view s);
Link natural_link(DistParam p);

struct LinearPredictorSpec {
  DistParam param = DistParam::Eta;
  Link link = Link::Logit;
  std::vector<int> fixed_effect_columns;  // indices into the design
  bool has_random_intercept = true;
  bool has_intercept = false;  // set by assemble_model from the family
};

struct RandomEffectsBlock {
  Eigen::MatrixXd b;           // n_persons x k
  Eigen::VectorXd sigma;       // k
  Eigen::MatrixXd corr_chol;   // k x k lower triangular
};

// Intercept (when present) then one entry per fixed_effect_columns entry.
struct CoefficientVector {
  double intercept = 0.0;
  Eigen::VectorXd beta;
};

// Stable sort by (person_id, wave); build_design on the sorted records gives
// identical matrices for any input permutation.
void canonical_sort(std::vector<ObservationRecord>& records);

// Throws DataError for an unknown level or missing covariate.
DesignMatrix build_design(std::span<const ObservationRecord> records, const DataSchema& schema);

// Drops records missing any declared covariate (absent, empty or "NA") and
// applies recodes in place. Returns the number of dropped records.
int drop_incomplete(std::vector<ObservationRecord>& records, const DataSchema& schema);
void apply_recodes(std::vector<ObservationRecord>& records, const DataSchema& schema);

// re_column selects the column of re.b used when spec.has_random_intercept.
Eigen::VectorXd linear_predictor(const DesignMatrix& design, const CoefficientVector& coef,
                                 const RandomEffectsBlock& re, int re_column,
                                 const LinearPredictorSpec& spec);

}  // namespace crb
