#pragma once

// Synthetic longitudinal days-of-use panels.
//
// simulate_panel draws from a weekly-pattern mixture: each response is either
// an abstention (0 days) or a habit of k days a week, k = 1..7, giving 4k days
// over a 28-day window, optionally jittered by one day. Covariates and a
// person-level propensity tilt the choice of k, so the data show zero mass,
// overdispersion and modes at multiples of 4 without matching any of the
// fitted families exactly.

#include <cstdint>
#include <string>
#include <vector>

#include "crb/families.hpp"
#include "crb/model.hpp"
#include "crb/regression.hpp"

namespace crb {

struct SimCovariate {
  std::string name;
  std::vector<std::string> levels;  // first level is the reference
  std::vector<double> probs;        // level probabilities
  std::vector<double> effects;      // score shift per level, first entry 0
  bool varies_by_wave = false;      // otherwise fixed per person
};

struct SimConfig {
  int n_persons = 500;
  int n_waves = 4;
  int n_days = 28;
  std::vector<SimCovariate> covariates;
  std::vector<double> wave_effects;  // per wave, empty = none
  double person_sd = 0.8;
  // P(abstain), P(1 day/week), ..., P(7 days/week).
  std::vector<double> pattern_mixture = {0.17, 0.25, 0.2, 0.13, 0.08, 0.06, 0.05, 0.06};
  double tilt = 0.5;     // strength of the score's pull toward heavier patterns
  double jitter = 0.3;   // probability of a +-1 day deviation for non-abstainers
  double dropout = 0.0;  // probability of dropping a row
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

// Five binary covariates and a three-level one used by the default simulation.
std::vector<SimCovariate> default_sim_covariates();

struct SimTruth {
  std::vector<double> person_effect;  // per person, in person order
  std::vector<int> pattern;           // per record, 0 = abstain
  std::vector<std::string> effect_names;  // "covariate:level" for non-reference levels
  std::vector<double> effect_values;
};

struct SimPanel {
  std::vector<ObservationRecord> records;  // canonical order
  DataSchema schema;                       // wave first, then covariates
  SimTruth truth;
};

SimPanel simulate_panel(const SimConfig& config);

// Row-wise responses from the family at a constrained parameter point.
std::vector<int> simulate_from_model(const ModelSpec& model, const ConstrainedParams& truth, const DesignMatrix& design,
                                     Rng& rng);

}  // namespace crb
