#pragma once

// Adaptive Hamiltonian Monte Carlo: multinomial No-U-Turn sampling with a
// diagonal metric, or fixed-length trajectories for debugging.
//
// Warm-up adapts the step size by dual averaging throughout and re-estimates
// the diagonal metric in expanding windows (75 / 25.. / 50 iteration buffers).
// Each chain draws from its own mt19937_64 stream seeded by (seed, chain).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace crb {

struct ModelSpec;
struct ModelData;

struct SamplerConfig {
  int n_chains = 4;
  int n_iterations = 5000;  // per chain, warm-up included
  int n_warmup = 500;
  int thin = 5;
  double target_acceptance = 0.8;
  int max_tree_depth = 10;
  // > 0 switches to plain HMC with this many leapfrog steps per iteration.
  int fixed_leapfrog_steps = 0;
  double init_radius = 2.0;
  std::uint64_t seed = 20240101;
  int n_threads = 0;  // 0 = one thread per chain

  void validate() const;
  int retained_per_chain() const { return (n_iterations - n_warmup) / thin; }
  int retained_total() const { return n_chains * retained_per_chain(); }
};

// Log density with gradient. Returns false when the point must be rejected.
// Must be safe to call concurrently from several threads.
struct DensityTarget {
  std::size_t dim = 0;
  std::function<bool(const Eigen::VectorXd& q, double& lp, Eigen::VectorXd& grad)> eval;
  std::vector<std::string> names;
};

// Binds the model log posterior; model and data must outlive the target.
DensityTarget model_target(const ModelSpec& model, const ModelData& data);

struct ChainInfo {
  int chain = 0;
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  int warmup_divergences = 0;
  int divergences = 0;  // post-warm-up iterations, retained or not
  int max_depth_hits = 0;
  double mean_accept_stat = 0.0;
  std::uint64_t n_leapfrog = 0;
};

struct PosteriorDraws {
  Eigen::MatrixXd draws;  // retained draws x dim, chains stacked in order
  std::vector<int> chain_id;
  std::vector<std::string> names;
  std::vector<ChainInfo> chains;
  // Per retained draw.
  std::vector<double> lp;
  std::vector<double> accept_stat;
  std::vector<int> tree_depth;
  std::vector<int> divergent;
  std::vector<double> energy;

  int n_chains() const { return static_cast<int>(chains.size()); }
  Eigen::Index n_draws() const { return draws.rows(); }
  Eigen::Index dim() const { return draws.cols(); }
  int total_divergences() const;
  // Column split by chain, for R-hat / ESS.
  std::vector<std::vector<double>> by_chain(Eigen::Index col) const;
  std::vector<std::vector<double>> by_chain(const std::vector<double>& per_draw) const;
};

// Throws ConfigError for an invalid config and SamplerError when no finite
// initial point is found in 100 tries or every warm-up transition diverges.
PosteriorDraws run_chains(const DensityTarget& target, const SamplerConfig& config);
PosteriorDraws run_chains(const ModelSpec& model, const ModelData& data, const SamplerConfig& config);

}  // namespace crb
