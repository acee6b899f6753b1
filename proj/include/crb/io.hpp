#pragma once

// File formats: CSV ingestion and emission, run/simulation configs (JSON),
// and the posterior draws container.
//
// draws.bin layout (little-endian):
//   char[8]  "CRBDRAWS"
//   u32      format version (1)
//   u64      n_draws
//   u64      dim
//   u32      n_chains
//   u32      chain id, one per draw
//   f64      draws, row-major (n_draws x dim)

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "crb/model.hpp"
#include "crb/priors.hpp"
#include "crb/regression.hpp"
#include "crb/sampler.hpp"
#include "crb/simulate.hpp"

namespace crb::io {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line;  // 1-based source line of each row
  int column(std::string_view name) const;  // -1 when absent
};

// RFC 4180 quoting; a header row is required. Throws DataError.
CsvTable parse_csv(std::string_view text, std::string_view source);
CsvTable read_csv(const fs::path& path);

std::string csv_field(std::string_view s);
// Shortest text that parses back to the same double; "NA" for NaN.
std::string format_double(double x);

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header);
  CsvWriter& field(std::string_view s);
  CsvWriter& field(double x);
  CsvWriter& field(int x);
  CsvWriter& field(long long x);
  void end_row();
  const std::string& str() const { return out_; }

 private:
  std::string out_;
  bool first_ = true;
};

std::string read_file(const fs::path& path);  // throws DataError when unreadable
// Writes a sibling temporary file, then renames it over path.
void write_file_atomic(const fs::path& path, std::string_view content);

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

struct SchemaConfig {
  std::string response = "days";
  int n_days = 28;
  std::string person_id = "person_id";
  std::string wave = "wave";
  std::vector<CovariateDecl> covariates;
};

struct ParameterConfig {
  DistParam param = DistParam::Eta;
  Link link = Link::Logit;
  std::vector<std::string> covariates;  // declared covariate names
  bool random_intercept = true;
};

struct ModelConfig {
  Family family = Family::CRatio;
  std::vector<ParameterConfig> parameters;
};

struct CheckConfig {
  std::vector<std::string> list = {"ecdf", "rootogram", "sd", "by_wave"};
  int ecdf_draws = 25;
  int sd_draws = 320;
  int rootogram_draws = 320;
};

struct RunConfig {
  std::string name;  // label used by compare; defaults to the family name
  fs::path input;    // resolved against the config file's directory
  SchemaConfig schema;
  ModelConfig model;
  PriorConfig priors;
  SamplerConfig sampler;
  fs::path output;
  CheckConfig checks;
  std::uint64_t seed = 20240101;
};

// Unknown keys, wrong types and invalid values throw ConfigError naming the
// JSON path, e.g. "config.sampler.chains: expected an integer".
RunConfig parse_run_config(const json& j, const fs::path& base_dir);
RunConfig load_run_config(const fs::path& path);
json run_config_json(const RunConfig& c);

struct SimRunConfig {
  SimConfig sim;
  fs::path output;
};

SimRunConfig parse_sim_config(const json& j, const fs::path& base_dir);
SimRunConfig load_sim_config(const fs::path& path);

json parse_json(std::string_view text, std::string_view source);  // throws ConfigError

// ---------------------------------------------------------------------------
// data
// ---------------------------------------------------------------------------

struct Ingested {
  std::vector<ObservationRecord> records;  // canonical order, recoded
  int dropped = 0;                         // rows with missing covariates
};

// Reads the response, person id, wave and declared covariates. max_days < 0
// leaves the upper bound unchecked. Throws DataError naming the line.
Ingested read_records(const CsvTable& table, const SchemaConfig& schema, int max_days, std::string_view source);

// person_id, wave, response, then covariates in schema order (wave skipped
// when declared as a covariate).
std::string records_csv(const std::vector<ObservationRecord>& records, const SchemaConfig& schema);

// Default schema declaration for a simulated panel.
SchemaConfig sim_schema(const SimPanel& panel, int n_days);

// ---------------------------------------------------------------------------
// draws
// ---------------------------------------------------------------------------

std::string draws_bin(const PosteriorDraws& d);
PosteriorDraws parse_draws_bin(std::string_view bytes, std::string_view source);
std::string draws_csv(const PosteriorDraws& d);
std::string sampler_csv(const PosteriorDraws& d);

}  // namespace crb::io
