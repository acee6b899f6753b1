#pragma once

// Convergence diagnostics (rank-normalized split R-hat, bulk and tail ESS)
// and posterior predictive checks over retained draws.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crb/families.hpp"
#include "crb/model.hpp"
#include "crb/sampler.hpp"

namespace crb {

// ---------------------------------------------------------------------------
// convergence
// ---------------------------------------------------------------------------

using ChainDraws = std::vector<std::vector<double>>;

// max(bulk, tail) rank-normalized split R-hat. Empty when undefined
// (fewer than 2 chains, fewer than 4 draws per chain, or constant draws).
std::optional<double> rank_rhat(const ChainDraws& chains);
std::optional<double> ess_bulk(const ChainDraws& chains);
std::optional<double> ess_tail(const ChainDraws& chains);

// Effective sample size of raw draws (no splitting or ranking), Geyer
// initial-monotone truncation.
std::optional<double> ess_basic(const ChainDraws& chains);

struct ConvergenceRow {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
  std::optional<double> rhat;
  std::optional<double> ess_bulk;
  std::optional<double> ess_tail;
};

ConvergenceRow convergence_row(std::string name, const ChainDraws& chains);
// One row per column of the draws matrix.
std::vector<ConvergenceRow> convergence_report(const PosteriorDraws& fit);

// ---------------------------------------------------------------------------
// population-level quantities
// ---------------------------------------------------------------------------

// Constrained population quantities (coefficients, thresholds, SDs, ...) per
// retained draw; columns follow population_summary order.
struct PopulationDraws {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // draws x quantities
  std::vector<int> chain_id;
  int column(std::string_view name) const;  // -1 when absent
  ChainDraws by_chain(int col) const;
};

PopulationDraws population_draws(const PosteriorDraws& fit, const ModelSpec& model);

struct OddsRatio {
  std::string name;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
  // "median (q05, q95)" with two decimals, e.g. "0.65 (0.51, 0.81)".
  std::string formatted() const;
};

OddsRatio odds_ratio(std::string name, std::span<const double> beta_draws);
// Throws ConfigError naming the available coefficients when a name is unknown.
std::vector<OddsRatio> odds_ratio_summary(const PosteriorDraws& fit, const ModelSpec& model,
                                          const std::vector<std::string>& coefficients);
std::vector<std::string> coefficient_names(const ModelSpec& model);

// ---------------------------------------------------------------------------
// posterior prediction
// ---------------------------------------------------------------------------

struct PredictiveDrawSet {
  std::vector<int> draw_index;          // retained draw behind each replicate
  std::vector<std::vector<int>> y_rep;  // n_pp_draws x n_obs
};

// Evenly spaced draw indices over the stacked chains.
std::vector<int> spread_draws(int n_available, int n_wanted);

PredictiveDrawSet posterior_predict(const PosteriorDraws& fit, const ModelSpec& model, const ModelData& data,
                                    int n_pp_draws, Rng& rng);

// Row-wise family parameters at one retained draw.
std::vector<FamilyParams> draw_params(const PosteriorDraws& fit, int draw, const ModelSpec& model,
                                      const ModelData& data);

// ---------------------------------------------------------------------------
// checks
// ---------------------------------------------------------------------------

// Support 0..n_days, plus a trailing ">N" bucket for unbounded families.
struct CountSupport {
  int n_days = 28;
  bool overflow = false;
  int size() const { return n_days + 1 + (overflow ? 1 : 0); }
  std::string label(int i) const;
  int bucket(int count) const;  // index into 0..size()-1
};

struct EcdfCurve {
  std::string group;  // "all" when ungrouped
  int n_obs = 0;
  std::vector<double> observed;                 // one value per support point
  std::vector<std::vector<double>> replicates;  // per predictive draw
};

struct EcdfCheck {
  CountSupport support;
  std::vector<int> draw_index;
  std::vector<EcdfCurve> curves;
};

std::vector<double> ecdf(std::span<const int> values, const CountSupport& support);
// groups, when given, labels each observation (e.g. its wave).
EcdfCheck ecdf_check(std::span<const int> observed, const PredictiveDrawSet& rep, const CountSupport& support,
                     const std::vector<std::string>* groups = nullptr);

struct RootogramRow {
  std::string count;
  double sqrt_observed = 0.0;
  double sqrt_expected = 0.0;  // posterior predictive median of sqrt(frequency)
  double lower = 0.0;          // 5% and 95% of replicate sqrt(frequency)
  double upper = 0.0;
  double residual = 0.0;       // sqrt_expected - sqrt_observed, the hanging bar's bottom
};

std::vector<RootogramRow> rootogram_check(std::span<const int> observed, const PredictiveDrawSet& rep,
                                          const CountSupport& support);

struct SdGroup {
  std::string group;
  int n_obs = 0;
  double observed_sd = 0.0;
  std::vector<double> replicate_sd;
  // Share of replicate SDs at or below the observed SD.
  double tail_fraction() const;
};

// Groups with fewer than two observations are excluded.
std::vector<SdGroup> sd_check(std::span<const int> observed, const PredictiveDrawSet& rep,
                              const std::vector<std::string>& groups);

double sample_sd(std::span<const double> x);

// Per-observation predictive summaries from the exact per-draw pmfs: mean and
// variance by total expectation and variance, quantiles (lower convention) of
// the draw-averaged pmf.
struct ObservationSummary {
  double mean = 0.0;
  double variance = 0.0;
  int q05 = 0;
  int q50 = 0;
  int q95 = 0;
};

// max_draws > 0 uses an evenly spaced subset of the retained draws.
std::vector<ObservationSummary> numeric_summaries(const PosteriorDraws& fit, const ModelSpec& model,
                                                  const ModelData& data, int max_draws = 0);

// Sorted distinct group labels, numerically when every label is a number.
std::vector<std::string> group_levels(const std::vector<std::string>& groups);

}  // namespace crb
