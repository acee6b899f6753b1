#pragma once

#include <random>
#include <string>
#include <vector>

#include "crb/model.hpp"
#include "crb/regression.hpp"

namespace test {

inline crb::DataSchema small_schema() {
  crb::DataSchema s;
  s.covariates.push_back({"wave", {"1", "2", "3", "4"}, "1", {}});
  s.covariates.push_back({"isolation", {"no", "yes"}, "no", {}});
  s.covariates.push_back({"gender", {"male", "female", "non-binary"}, "male", {}});
  return s;
}

// Random records over the small schema; days uniform on 0..n_days.
inline std::vector<crb::ObservationRecord> random_records(int n_persons, int n_waves, int n_days, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> day(0, n_days);
  const char* genders[] = {"male", "female", "non-binary"};
  std::vector<crb::ObservationRecord> out;
  for (int p = 0; p < n_persons; ++p)
    for (int w = 1; w <= n_waves; ++w) {
      crb::ObservationRecord r;
      r.person_id = "p" + std::to_string(p);
      r.wave = std::to_string(w);
      r.covariates = {{"wave", r.wave}, {"isolation", rng() % 3 == 0 ? "yes" : "no"}, {"gender", genders[p % 3]}};
      r.days = day(rng);
      out.push_back(std::move(r));
    }
  return out;
}

inline std::vector<int> all_columns(const crb::DesignMatrix& dm) {
  std::vector<int> c;
  for (int j = 0; j < dm.n_cols(); ++j) c.push_back(j);
  return c;
}

inline std::vector<int> days_of(const std::vector<crb::ObservationRecord>& r) {
  std::vector<int> d;
  for (const auto& x : r) d.push_back(x.days);
  return d;
}

}  // namespace test
