#include "crb/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "crb/error.hpp"

namespace crb {

void SimConfig::validate() const {
  if (n_persons < 1) throw ConfigError("simulate: n_persons must be >= 1");
  if (n_waves < 1) throw ConfigError("simulate: n_waves must be >= 1");
  if (n_days < 1) throw ConfigError("simulate: n_days must be >= 1");
  if (pattern_mixture.size() != 8) throw ConfigError("simulate: pattern_mixture needs 8 entries (abstain, 1..7 days/week)");
  double total = 0.0;
  for (double p : pattern_mixture) {
    if (!(p >= 0.0)) throw ConfigError("simulate: pattern_mixture entries must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("simulate: pattern_mixture must sum to 1");
  if (!(person_sd >= 0.0)) throw ConfigError("simulate: person_sd must be non-negative");
  if (!(jitter >= 0.0 && jitter <= 1.0)) throw ConfigError("simulate: jitter must lie in [0,1]");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("simulate: dropout must lie in [0,1)");
  if (!std::isfinite(tilt)) throw ConfigError("simulate: tilt must be finite");
  if (!wave_effects.empty() && static_cast<int>(wave_effects.size()) != n_waves)
    throw ConfigError("simulate: wave_effects needs one entry per wave");
  for (const auto& c : covariates) {
    if (c.levels.size() < 2) throw ConfigError("simulate: covariate '" + c.name + "' needs at least two levels");
    if (c.probs.size() != c.levels.size() || c.effects.size() != c.levels.size())
      throw ConfigError("simulate: covariate '" + c.name + "' needs one prob and one effect per level");
    double s = 0.0;
    for (double p : c.probs) {
      if (!(p >= 0.0)) throw ConfigError("simulate: covariate '" + c.name + "' has a negative probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("simulate: covariate '" + c.name + "' probabilities must sum to 1");
    if (c.name == "wave") throw ConfigError("simulate: 'wave' is reserved");
  }
}

std::vector<SimCovariate> default_sim_covariates() {
  return {
      {"gender", {"male", "female"}, {0.5, 0.5}, {0.0, -0.3}, false},
      {"age", {"18-34", "35-54", "55+"}, {0.4, 0.35, 0.25}, {0.0, 0.3, 0.5}, false},
      {"living_alone", {"no", "yes"}, {0.75, 0.25}, {0.0, 0.4}, false},
      {"isolation", {"no", "yes"}, {0.8, 0.2}, {0.0, 0.35}, true},
      {"children", {"no", "yes"}, {0.6, 0.4}, {0.0, -0.25}, false},
      {"job_loss", {"no", "yes"}, {0.85, 0.15}, {0.0, 0.3}, true},
  };
}

namespace {

int draw_index(const std::vector<double>& probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  // Rounding left u above the last cumulative sum; take the last non-empty level.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return 0;
}

std::string person_label(int p, int n) {
  const int width = static_cast<int>(std::to_string(n).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%0*d", width, p + 1);
  return buf;
}

}  // namespace

SimPanel simulate_panel(const SimConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  SimPanel out;
  CovariateDecl wave{"wave", {}, "1", {}};
  for (int w = 1; w <= cfg.n_waves; ++w) wave.levels.push_back(std::to_string(w));
  out.schema.covariates.push_back(wave);
  for (const auto& c : cfg.covariates) {
    out.schema.covariates.push_back({c.name, c.levels, c.levels.front(), {}});
    for (std::size_t l = 1; l < c.levels.size(); ++l) {
      out.truth.effect_names.push_back(c.name + ":" + c.levels[l]);
      out.truth.effect_values.push_back(c.effects[l]);
    }
  }
  for (int w = 1; w < cfg.n_waves; ++w) {
    out.truth.effect_names.push_back("wave:" + std::to_string(w + 1));
    out.truth.effect_values.push_back(cfg.wave_effects.empty() ? 0.0 : cfg.wave_effects[static_cast<std::size_t>(w)] -
                                                                           cfg.wave_effects.front());
  }

  const double weeks = cfg.n_days / 7.0;
  for (int p = 0; p < cfg.n_persons; ++p) {
    const double b = cfg.person_sd * n01(rng);
    out.truth.person_effect.push_back(b);
    std::vector<int> fixed_level(cfg.covariates.size());
    for (std::size_t c = 0; c < cfg.covariates.size(); ++c) fixed_level[c] = draw_index(cfg.covariates[c].probs, rng);
    for (int w = 0; w < cfg.n_waves; ++w) {
      ObservationRecord r;
      r.person_id = person_label(p, cfg.n_persons);
      r.wave = std::to_string(w + 1);
      r.covariates["wave"] = r.wave;
      double score = b + (cfg.wave_effects.empty() ? 0.0 : cfg.wave_effects[static_cast<std::size_t>(w)]);
      for (std::size_t c = 0; c < cfg.covariates.size(); ++c) {
        const auto& cov = cfg.covariates[c];
        const int lvl = cov.varies_by_wave ? draw_index(cov.probs, rng) : fixed_level[c];
        r.covariates[cov.name] = cov.levels[static_cast<std::size_t>(lvl)];
        score += cov.effects[static_cast<std::size_t>(lvl)];
      }
      // Abstention keeps its configured rate; the score tilts the habit choice.
      int k = 0;
      if (unif(rng) >= cfg.pattern_mixture[0]) {
        std::vector<double> w8(7);
        for (int j = 1; j <= 7; ++j)
          w8[static_cast<std::size_t>(j - 1)] = cfg.pattern_mixture[static_cast<std::size_t>(j)] * std::exp(cfg.tilt * score * (j - 1));
        const double tot = std::accumulate(w8.begin(), w8.end(), 0.0);
        if (tot > 0.0) {
          for (auto& v : w8) v /= tot;
          k = 1 + draw_index(w8, rng);
        }
      }
      int days = static_cast<int>(std::lround(k * weeks));
      const bool jitter = k > 0 && unif(rng) < cfg.jitter;
      if (jitter) days += unif(rng) < 0.5 ? -1 : 1;
      days = std::clamp(days, 0, cfg.n_days);
      const bool drop = cfg.dropout > 0.0 && unif(rng) < cfg.dropout;
      if (drop) continue;
      r.days = days;
      out.truth.pattern.push_back(k);
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<int> simulate_from_model(const ModelSpec& model, const ConstrainedParams& truth, const DesignMatrix& design,
                                     Rng& rng) {
  const auto data = ModelData::prepare(model, design, std::vector<int>(static_cast<std::size_t>(design.n_obs()), 0));
  const auto params = observation_params(model, truth, data);
  std::vector<int> y(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) y[i] = family_sample(params[i], model.n_days, rng);
  return y;
}

}  // namespace crb
