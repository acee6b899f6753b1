#include "crb/regression.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "crb/error.hpp"
#include "crb/math.hpp"

namespace crb {

int DesignMatrix::column(const std::string& name) const {
  const auto it = std::find(column_names.begin(), column_names.end(), name);
  return it == column_names.end() ? -1 : static_cast<int>(it - column_names.begin());
}

std::string_view link_name(Link l) {
  switch (l) {
    case Link::Logit: return "logit";
    case Link::Log: return "log";
    case Link::Identity: return "identity";
  }
  return "unknown";
}

Link parse_link(std::string_view s) {
  if (s == "logit") return Link::Logit;
  if (s == "log") return Link::Log;
  if (s == "identity") return Link::Identity;
  throw ConfigError("unknown link '" + std::string(s) + "'");
}

double link_inverse(double eta, Link link) {
  switch (link) {
    case Link::Logit: return math::sigmoid(eta);
    case Link::Log: return std::exp(eta);
    case Link::Identity: return eta;
  }
  return eta;
}

double link_apply(double value, Link link) {
  switch (link) {
    case Link::Logit: return math::logit(value);
    case Link::Log: return std::log(value);
    case Link::Identity: return value;
  }
  return value;
}

std::string_view dist_param_name(DistParam p) {
  switch (p) {
    case DistParam::Eta: return "eta";
    case DistParam::Pi: return "pi";
    case DistParam::Phi: return "phi";
    case DistParam::Psi: return "psi";
    case DistParam::Mu: return "mu";
    case DistParam::Alpha: return "alpha";
  }
  return "unknown";
}

DistParam parse_dist_param(std::string_view s) {
  for (auto p : {DistParam::Eta, DistParam::Pi, DistParam::Phi, DistParam::Psi, DistParam::Mu, DistParam::Alpha})
    if (dist_param_name(p) == s) return p;
  throw ConfigError("unknown distributional parameter '" + std::string(s) + "'");
}

Link natural_link(DistParam p) {
  switch (p) {
    case DistParam::Eta:
    case DistParam::Pi:
    case DistParam::Psi: return Link::Logit;
    case DistParam::Phi:
    case DistParam::Mu:
    case DistParam::Alpha: return Link::Log;
  }
  return Link::Identity;
}

void canonical_sort(std::vector<ObservationRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    if (a.person_id != b.person_id) return a.person_id < b.person_id;
    return a.wave < b.wave;
  });
}

namespace {

bool missing_value(const ObservationRecord& r, const std::string& name) {
  const auto it = r.covariates.find(name);
  return it == r.covariates.end() || it->second.empty() || it->second == "NA";
}

}  // namespace

void apply_recodes(std::vector<ObservationRecord>& records, const DataSchema& schema) {
  for (const auto& decl : schema.covariates) {
    if (decl.recode.empty()) continue;
    for (auto& r : records) {
      auto it = r.covariates.find(decl.name);
      if (it == r.covariates.end()) continue;
      if (auto rc = decl.recode.find(it->second); rc != decl.recode.end()) it->second = rc->second;
    }
  }
}

int drop_incomplete(std::vector<ObservationRecord>& records, const DataSchema& schema) {
  const auto before = records.size();
  std::erase_if(records, [&](const ObservationRecord& r) {
    return std::any_of(schema.covariates.begin(), schema.covariates.end(),
                       [&](const CovariateDecl& d) { return missing_value(r, d.name); });
  });
  return static_cast<int>(before - records.size());
}

DesignMatrix build_design(std::span<const ObservationRecord> records, const DataSchema& schema) {
  DesignMatrix dm;
  struct ColumnBlock {
    const CovariateDecl* decl;
    std::unordered_map<std::string, int> level_col;  // -1 for the reference
  };
  std::vector<ColumnBlock> blocks;
  for (const auto& decl : schema.covariates) {
    if (decl.levels.empty()) throw ConfigError("covariate '" + decl.name + "' declares no levels");
    const auto& ref = decl.reference_level();
    if (std::find(decl.levels.begin(), decl.levels.end(), ref) == decl.levels.end())
      throw ConfigError("covariate '" + decl.name + "': reference level '" + ref + "' is not a declared level");
    ColumnBlock blk{&decl, {}};
    for (const auto& lvl : decl.levels) {
      if (lvl == ref) {
        blk.level_col[lvl] = -1;
      } else {
        blk.level_col[lvl] = static_cast<int>(dm.column_names.size());
        dm.column_names.push_back(decl.name + ":" + lvl);
      }
    }
    blocks.push_back(std::move(blk));
  }

  const auto n = static_cast<Eigen::Index>(records.size());
  dm.rows = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(dm.column_names.size()));
  dm.person_index.resize(records.size());
  std::unordered_map<std::string, int> person_of;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& rec = records[static_cast<std::size_t>(i)];
    for (const auto& blk : blocks) {
      const auto it = rec.covariates.find(blk.decl->name);
      if (it == rec.covariates.end() || it->second.empty() || it->second == "NA")
        throw DataError("record " + std::to_string(i + 1) + ": missing covariate '" + blk.decl->name + "'");
      const auto lc = blk.level_col.find(it->second);
      if (lc == blk.level_col.end())
        throw DataError("record " + std::to_string(i + 1) + ": unknown level '" + it->second +
                        "' for covariate '" + blk.decl->name + "'");
      if (lc->second >= 0) dm.rows(i, lc->second) = 1.0;
    }
    auto [pit, inserted] = person_of.try_emplace(rec.person_id, dm.n_persons());
    if (inserted) dm.person_ids.push_back(rec.person_id);
    dm.person_index[static_cast<std::size_t>(i)] = pit->second;
  }
  return dm;
}

Eigen::VectorXd linear_predictor(const DesignMatrix& design, const CoefficientVector& coef,
                                 const RandomEffectsBlock& re, int re_column,
                                 const LinearPredictorSpec& spec) {
  const auto p = static_cast<Eigen::Index>(spec.fixed_effect_columns.size());
  if (coef.beta.size() != p) throw std::logic_error("linear_predictor: coefficient length mismatch");
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(design.n_obs(), spec.has_intercept ? coef.intercept : 0.0);
  for (Eigen::Index j = 0; j < p; ++j) {
    const int col = spec.fixed_effect_columns[static_cast<std::size_t>(j)];
    if (col < 0 || col >= design.n_cols()) throw std::logic_error("linear_predictor: column out of range");
    eta += design.rows.col(col) * coef.beta(j);
  }
  if (spec.has_random_intercept) {
    if (re_column < 0 || re_column >= re.b.cols() || re.b.rows() != design.n_persons())
      throw std::logic_error("linear_predictor: random-effect block mismatch");
    for (int i = 0; i < design.n_obs(); ++i) eta(i) += re.b(design.person_index[static_cast<std::size_t>(i)], re_column);
  }
  return eta;
}

}  // namespace crb
