#include "crb/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <thread>

#include "crb/error.hpp"
#include "crb/math.hpp"
#include "crb/model.hpp"

namespace crb {

void SamplerConfig::validate() const {
  if (n_chains < 1) throw ConfigError("sampler: n_chains must be >= 1");
  if (n_iterations < 1) throw ConfigError("sampler: n_iterations must be >= 1");
  if (n_warmup < 0 || n_warmup >= n_iterations)
    throw ConfigError("sampler: n_warmup must lie in [0, n_iterations)");
  if (thin < 1) throw ConfigError("sampler: thin must be >= 1");
  if (retained_per_chain() < 1) throw ConfigError("sampler: no draws retained after warm-up and thinning");
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
    throw ConfigError("sampler: target_acceptance must lie in (0,1)");
  if (max_tree_depth < 1 || max_tree_depth > 30) throw ConfigError("sampler: max_tree_depth must lie in 1..30");
  if (fixed_leapfrog_steps < 0) throw ConfigError("sampler: fixed_leapfrog_steps must be >= 0");
  if (!(init_radius > 0.0)) throw ConfigError("sampler: init_radius must be positive");
  if (n_threads < 0) throw ConfigError("sampler: n_threads must be >= 0");
}

int PosteriorDraws::total_divergences() const {
  int total = 0;
  for (const auto& c : chains) total += c.divergences;
  return total;
}

std::vector<std::vector<double>> PosteriorDraws::by_chain(Eigen::Index col) const {
  std::vector<std::vector<double>> out(chains.size());
  for (Eigen::Index r = 0; r < draws.rows(); ++r) out[static_cast<std::size_t>(chain_id[r])].push_back(draws(r, col));
  return out;
}

std::vector<std::vector<double>> PosteriorDraws::by_chain(const std::vector<double>& per_draw) const {
  std::vector<std::vector<double>> out(chains.size());
  for (std::size_t r = 0; r < per_draw.size(); ++r) out[static_cast<std::size_t>(chain_id[r])].push_back(per_draw[r]);
  return out;
}

DensityTarget model_target(const ModelSpec& model, const ModelData& data) {
  DensityTarget t;
  t.dim = model.layout.dim();
  t.names = model.layout.coordinate_names();
  t.eval = [&model, &data](const Eigen::VectorXd& q, double& lp, Eigen::VectorXd& grad) {
    auto r = log_posterior(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())), model, data);
    if (!r.ok) return false;
    lp = r.value;
    grad = std::move(r.gradient);
    return true;
  };
  return t;
}

namespace {

constexpr double kMaxDeltaH = 1000.0;

struct PhasePoint {
  Eigen::VectorXd q, p, grad;
  double lp = 0.0;
  bool ok = true;
};

class DualAveraging {
 public:
  DualAveraging(double delta) : delta_(delta) {}
  void restart(double eps) {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
    mu_ = std::log(10.0 * eps);
  }
  double learn(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / kGamma;
    const double x_eta = std::pow(static_cast<double>(counter_), -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }
  double final_step() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  long counter_ = 0;
};

// Expanding-window diagonal metric estimation.
class WindowedVariance {
 public:
  WindowedVariance(int n_warmup, std::size_t dim) : n_warmup_(n_warmup), mean_(Eigen::VectorXd::Zero(dim)), m2_(mean_) {
    if (n_warmup < 20) {
      active_ = false;
      return;
    }
    if (init_buffer_ + base_window_ + term_buffer_ > n_warmup) {
      init_buffer_ = static_cast<int>(0.15 * n_warmup);
      term_buffer_ = static_cast<int>(0.1 * n_warmup);
      base_window_ = n_warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  // Returns true at the end of a window, with the regularized variance in var.
  bool learn(const Eigen::VectorXd& q, Eigen::VectorXd& var) {
    if (!active_) return false;
    bool updated = false;
    if (counter_ >= init_buffer_ && counter_ < n_warmup_ - term_buffer_) {
      ++n_;
      const Eigen::VectorXd delta = q - mean_;
      mean_ += delta / static_cast<double>(n_);
      m2_ += delta.cwiseProduct(q - mean_);
    }
    if (counter_ == next_window_ && counter_ != n_warmup_) {
      const double n = static_cast<double>(n_);
      var = (n / (n + 5.0)) * (m2_ / (n - 1.0)) + Eigen::VectorXd::Constant(mean_.size(), 1e-3 * 5.0 / (n + 5.0));
      n_ = 0;
      mean_.setZero();
      m2_.setZero();
      advance();
      updated = true;
    }
    ++counter_;
    return updated;
  }

 private:
  void advance() {
    if (next_window_ == n_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != n_warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= n_warmup_ - term_buffer_) next_window_ = n_warmup_ - term_buffer_ - 1;
    }
  }

  bool active_ = true;
  int n_warmup_;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_ = 0;
  int next_window_ = 0;
  int counter_ = 0;
  long n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

struct Transition {
  double accept_stat = 0.0;
  int depth = 0;
  bool divergent = false;
  int n_leapfrog = 0;
};

class Chain {
 public:
  Chain(const DensityTarget& target, const SamplerConfig& cfg, int chain)
      : target_(target), cfg_(cfg), inv_metric_(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(target.dim))) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffU), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(chain)};
    rng_.seed(seq);
  }

  void evaluate(PhasePoint& z) const {
    z.ok = target_.eval(z.q, z.lp, z.grad) && std::isfinite(z.lp) && z.grad.allFinite();
    if (!z.ok) z.lp = -math::kInf;
  }

  void initialize() {
    const auto d = static_cast<Eigen::Index>(target_.dim);
    std::uniform_real_distribution<double> u(-cfg_.init_radius, cfg_.init_radius);
    for (int attempt = 0; attempt < 100; ++attempt) {
      z_.q.resize(d);
      for (Eigen::Index i = 0; i < d; ++i) z_.q(i) = u(rng_);
      z_.grad.resize(d);
      evaluate(z_);
      if (z_.ok) return;
    }
    throw SamplerError("sampler: no finite initial point after 100 attempts");
  }

  double kinetic(const Eigen::VectorXd& p) const { return 0.5 * p.cwiseProduct(inv_metric_).dot(p); }
  double hamiltonian(const PhasePoint& z) const { return z.ok ? -z.lp + kinetic(z.p) : math::kInf; }

  void sample_momentum(PhasePoint& z) {
    std::normal_distribution<double> n01;
    z.p.resize(z.q.size());
    for (Eigen::Index i = 0; i < z.q.size(); ++i) z.p(i) = n01(rng_) / std::sqrt(inv_metric_(i));
  }

  void leapfrog(PhasePoint& z, double eps) const {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_metric_.cwiseProduct(z.p);
    evaluate(z);
    if (z.ok) z.p += 0.5 * eps * z.grad;
  }

  // Step-size heuristic: double or halve until the one-step acceptance
  // crosses 0.8.
  void init_step_size() {
    PhasePoint z = z_;
    sample_momentum(z);
    const double h0 = hamiltonian(z);
    PhasePoint z1 = z;
    leapfrog(z1, eps_);
    double delta_h = h0 - hamiltonian(z1);
    if (!std::isfinite(delta_h)) delta_h = -math::kInf;
    const int direction = delta_h > std::log(0.8) ? 1 : -1;
    for (int i = 0; i < 100; ++i) {
      PhasePoint zz = z;
      sample_momentum(zz);
      const double h = hamiltonian(zz);
      leapfrog(zz, eps_);
      double dh = h - hamiltonian(zz);
      if (!std::isfinite(dh)) dh = -math::kInf;
      if (direction == 1 && !(dh > std::log(0.8))) break;
      if (direction == -1 && !(dh < std::log(0.8))) break;
      eps_ = direction == 1 ? 2.0 * eps_ : 0.5 * eps_;
      if (eps_ > 1e7) throw SamplerError("sampler: step size diverged during initialisation (improper target?)");
      if (eps_ < 1e-12) break;
    }
  }

  Transition transition() { return cfg_.fixed_leapfrog_steps > 0 ? hmc_transition() : nuts_transition(); }

  Transition hmc_transition() {
    Transition t;
    PhasePoint z = z_;
    sample_momentum(z);
    const double h0 = hamiltonian(z);
    // Jitter avoids periodic trajectories for a fixed number of steps.
    const double eps = eps_ * std::uniform_real_distribution<double>(0.8, 1.2)(rng_);
    for (int i = 0; i < cfg_.fixed_leapfrog_steps; ++i) {
      leapfrog(z, eps);
      ++t.n_leapfrog;
      if (!z.ok) break;
    }
    double h = hamiltonian(z);
    if (std::isnan(h)) h = math::kInf;
    if (h - h0 > kMaxDeltaH) t.divergent = true;
    t.accept_stat = h0 - h > 0 ? 1.0 : std::exp(h0 - h);
    if (z.ok && std::uniform_real_distribution<double>()(rng_) < t.accept_stat) z_ = std::move(z);
    energy_ = hamiltonian_after(z_);
    return t;
  }

  double hamiltonian_after(const PhasePoint& z) {
    // Energy recorded as Stan does: potential plus kinetic of the accepted point.
    return z.p.size() ? -z.lp + kinetic(z.p) : -z.lp;
  }

  static bool uturn_ok(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                       const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
  }

  struct TreeState {
    double h0;
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    bool divergent = false;
  };

  bool build_tree(int depth, PhasePoint& z, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end,
                  double sign, double& log_sum_weight, TreeState& st) {
    if (depth == 0) {
      leapfrog(z, sign * eps_);
      ++st.n_leapfrog;
      double h = hamiltonian(z);
      if (std::isnan(h)) h = math::kInf;
      if (h - st.h0 > kMaxDeltaH) st.divergent = true;
      log_sum_weight = math::log_sum_exp(log_sum_weight, st.h0 - h);
      st.sum_metro_prob += st.h0 - h > 0 ? 1.0 : std::exp(st.h0 - h);
      z_propose = z;
      p_sharp_beg = inv_metric_.cwiseProduct(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !st.divergent;
    }
    const auto d = z.q.size();
    // Initial subtree.
    Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd p_init_end(d), p_sharp_init_end(d);
    double lsw_init = -math::kInf;
    if (!build_tree(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, sign, lsw_init,
                    st))
      return false;
    // Final subtree.
    PhasePoint z_propose_final = z;
    Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd p_final_beg(d), p_sharp_final_beg(d);
    double lsw_final = -math::kInf;
    if (!build_tree(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, sign,
                    lsw_final, st))
      return false;

    const double lsw_subtree = math::log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = math::log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (std::uniform_real_distribution<double>()(rng_) < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = uturn_ok(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && uturn_ok(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && uturn_ok(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  Transition nuts_transition() {
    PhasePoint z = z_;
    sample_momentum(z);
    TreeState st;
    st.h0 = hamiltonian(z);

    PhasePoint z_fwd = z, z_bck = z, z_sample = z, z_propose = z;
    const Eigen::VectorXd p0 = z.p;
    const Eigen::VectorXd p_sharp0 = inv_metric_.cwiseProduct(z.p);
    Eigen::VectorXd p_fwd_fwd = p0, p_sharp_fwd_fwd = p_sharp0, p_fwd_bck = p0, p_sharp_fwd_bck = p_sharp0;
    Eigen::VectorXd p_bck_fwd = p0, p_sharp_bck_fwd = p_sharp0, p_bck_bck = p0, p_sharp_bck_bck = p_sharp0;
    Eigen::VectorXd rho = p0;
    double log_sum_weight = 0.0;
    int depth = 0;
    const auto d = z.q.size();
    std::uniform_real_distribution<double> unif;

    while (depth < cfg_.max_tree_depth) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(d), rho_bck = Eigen::VectorXd::Zero(d);
      double lsw_subtree = -math::kInf;
      bool valid;
      if (unif(rng_) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z_fwd, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd,
                           1.0, lsw_subtree, st);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z_bck, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck,
                           -1.0, lsw_subtree, st);
      }
      if (!valid) break;
      ++depth;
      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (unif(rng_) < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = math::log_sum_exp(log_sum_weight, lsw_subtree);
      rho = rho_bck + rho_fwd;
      bool persist = uturn_ok(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && uturn_ok(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && uturn_ok(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }

    Transition t;
    t.depth = depth;
    t.divergent = st.divergent;
    t.n_leapfrog = st.n_leapfrog;
    t.accept_stat = st.n_leapfrog > 0 ? st.sum_metro_prob / st.n_leapfrog : 0.0;
    z_ = std::move(z_sample);
    energy_ = hamiltonian_after(z_);
    return t;
  }

  void run(PosteriorDraws& out, ChainInfo& info, std::size_t row0) {
    initialize();
    init_step_size();
    DualAveraging da(cfg_.target_acceptance);
    da.restart(eps_);
    WindowedVariance wv(cfg_.n_warmup, target_.dim);
    double accept_sum = 0.0;
    int post = 0;
    std::size_t row = row0;
    for (int it = 0; it < cfg_.n_iterations; ++it) {
      const Transition t = transition();
      info.n_leapfrog += static_cast<std::uint64_t>(t.n_leapfrog);
      if (it < cfg_.n_warmup) {
        if (t.divergent) ++info.warmup_divergences;
        eps_ = da.learn(t.accept_stat);
        Eigen::VectorXd var;
        if (wv.learn(z_.q, var)) {
          inv_metric_ = var;
          init_step_size();
          da.restart(eps_);
        }
        if (it == cfg_.n_warmup - 1) {
          eps_ = da.final_step();
          if (info.warmup_divergences == cfg_.n_warmup)
            throw SamplerError("sampler: chain " + std::to_string(info.chain) + " diverged on every warm-up iteration");
        }
        continue;
      }
      if (t.divergent) ++info.divergences;
      if (t.depth >= cfg_.max_tree_depth && cfg_.fixed_leapfrog_steps == 0) ++info.max_depth_hits;
      accept_sum += t.accept_stat;
      ++post;
      if ((it - cfg_.n_warmup) % cfg_.thin == cfg_.thin - 1) {
        out.draws.row(static_cast<Eigen::Index>(row)) = z_.q.transpose();
        out.lp[row] = z_.lp;
        out.accept_stat[row] = t.accept_stat;
        out.tree_depth[row] = t.depth;
        out.divergent[row] = t.divergent ? 1 : 0;
        out.energy[row] = energy_;
        ++row;
      }
    }
    info.step_size = eps_;
    info.inv_metric = inv_metric_;
    info.mean_accept_stat = post > 0 ? accept_sum / post : 0.0;
  }

 private:
  const DensityTarget& target_;
  const SamplerConfig& cfg_;
  std::mt19937_64 rng_;
  Eigen::VectorXd inv_metric_;
  double eps_ = 1.0;
  double energy_ = 0.0;
  PhasePoint z_;
};

}  // namespace

PosteriorDraws run_chains(const DensityTarget& target, const SamplerConfig& config) {
  config.validate();
  if (target.dim == 0) throw ConfigError("sampler: target has dimension 0");
  const int per = config.retained_per_chain();
  const auto total = static_cast<std::size_t>(config.n_chains) * static_cast<std::size_t>(per);
  PosteriorDraws out;
  out.draws.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(target.dim));
  out.chain_id.resize(total);
  out.lp.resize(total);
  out.accept_stat.resize(total);
  out.tree_depth.resize(total);
  out.divergent.resize(total);
  out.energy.resize(total);
  out.names = target.names;
  out.chains.resize(static_cast<std::size_t>(config.n_chains));
  for (int c = 0; c < config.n_chains; ++c) {
    out.chains[static_cast<std::size_t>(c)].chain = c;
    for (int k = 0; k < per; ++k) out.chain_id[static_cast<std::size_t>(c * per + k)] = c;
  }

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.n_chains));
  auto work = [&](int c) {
    try {
      Chain chain(target, config, c);
      chain.run(out, out.chains[static_cast<std::size_t>(c)], static_cast<std::size_t>(c) * static_cast<std::size_t>(per));
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  };
  const int n_threads = std::min(config.n_chains, config.n_threads > 0 ? config.n_threads : config.n_chains);
  if (n_threads <= 1) {
    for (int c = 0; c < config.n_chains; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t] {
        for (int c = t; c < config.n_chains; c += n_threads) work(c);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

PosteriorDraws run_chains(const ModelSpec& model, const ModelData& data, const SamplerConfig& config) {
  return run_chains(model_target(model, data), config);
}

}  // namespace crb
