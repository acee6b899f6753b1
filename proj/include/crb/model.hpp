#pragma once

// Joint log posterior over an unconstrained parameter vector.
//
// Layout (blocks in this order):
//   per linear predictor p:  <p>.intercept (families other than cratio),
//                            <p>.hs_z, <p>.hs_log_lambda, <p>.hs_log_tau
//   thresholds               (cratio only, N entries)
//   log_phi / logit_psi / log_alpha   (family scalars that are not regressed)
//   re.log_sigma (k), re.corr (k(k-1)/2), re.z (n_persons * k, person-major)
//
// Coefficients are non-centred: beta_j = z_j * lambda_j * tau. Person effects
// are non-centred: b_i = diag(sigma) * L * z_i.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crb/families.hpp"
#include "crb/priors.hpp"
#include "crb/regression.hpp"

namespace crb {

struct ParameterBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

class ParameterLayout {
 public:
  void add(std::string name, std::size_t length);
  const ParameterBlock* find(std::string_view name) const;
  const ParameterBlock& at(std::string_view name) const;
  const std::vector<ParameterBlock>& blocks() const { return blocks_; }
  std::size_t dim() const { return dim_; }
  // One label per coordinate, e.g. "re.z[3]".
  std::vector<std::string> coordinate_names() const;

 private:
  std::vector<ParameterBlock> blocks_;
  std::size_t dim_ = 0;
};

struct ModelSpec {
  Family family = Family::CRatio;
  IntervalLength n_days{28};
  std::vector<LinearPredictorSpec> predictors;  // canonical order, primary first
  std::vector<int> re_index;                    // per predictor, -1 when no random intercept
  int n_re = 0;                                 // k
  bool scalar_phi = false;
  bool scalar_psi = false;
  bool scalar_alpha = false;
  PriorConfig priors;
  std::vector<std::string> column_names;  // design columns
  int n_persons = 0;
  ParameterLayout layout;

  // Index of the predictor for a distributional parameter, or -1.
  int predictor_of(DistParam p) const;
  // Coefficient label: "<column>" for the primary predictor, "<param>_<column>" otherwise.
  std::string coefficient_name(int predictor, int j) const;
};

// Validates the regressed-parameter set for the family and lays out the
// parameter vector. Throws ConfigError on an unsupported combination.
ModelSpec assemble_model(Family family, std::vector<LinearPredictorSpec> specs, const DesignMatrix& design,
                         IntervalLength n, const PriorConfig& priors = {});

// Responses plus design, with per-predictor design slices cached.
struct ModelData {
  DesignMatrix design;
  std::vector<int> days;
  std::vector<std::string> waves;
  std::vector<Eigen::MatrixXd> predictor_x;

  static ModelData prepare(const ModelSpec& model, DesignMatrix design, std::vector<int> days,
                           std::vector<std::string> waves = {});
  int n_obs() const { return static_cast<int>(days.size()); }
  // FNV-1a over responses, person indices and the design.
  std::uint64_t fingerprint() const;
};

struct ConstrainedParams {
  std::vector<CoefficientVector> coef;  // per predictor
  std::vector<HorseshoeState> horseshoe;
  std::vector<double> thresholds;
  double phi = 0.0;
  double psi = 0.0;
  double alpha = 0.0;
  RandomEffectsBlock re;
};

ConstrainedParams constrain(std::span<const double> theta, const ModelSpec& model);

// Row-wise family parameters implied by a constrained point.
std::vector<FamilyParams> observation_params(const ModelSpec& model, const ConstrainedParams& cp,
                                             const ModelData& data);

// Named population-level quantities (coefficients, thresholds, SDs,
// correlations, family scalars, horseshoe global scales).
struct NamedValue {
  std::string name;
  double value;
};
std::vector<NamedValue> population_summary(const ModelSpec& model, const ConstrainedParams& cp);

struct LogPosterior {
  double value = 0.0;
  Eigen::VectorXd gradient;
  bool ok = true;  // false when a non-finite intermediate was hit; value is -inf
};

LogPosterior log_posterior(std::span<const double> theta, const ModelSpec& model, const ModelData& data);

// Value-only split used by tests: sum of log-likelihood terms at theta.
double log_likelihood(std::span<const double> theta, const ModelSpec& model, const ModelData& data);

}  // namespace crb
