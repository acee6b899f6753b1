#pragma once

// Command-line workflow: simulate, fit, check, compare, summarize.
//
// Exit codes: 0 success, 1 internal error, 2 configuration or usage error,
// 3 data error (including missing or inconsistent fit artifacts), 4 sampler
// failure. Tables go to stdout, diagnostics to stderr.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "crb/io.hpp"
#include "crb/model.hpp"
#include "crb/sampler.hpp"

namespace crb::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitSampler = 4;

// Environment variable consulted for the default sampler thread count.
inline constexpr const char* kThreadsEnv = "CRB_THREADS";

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

// Model and data rebuilt from a config and ingested records. Levels left
// empty in the schema are filled from the data (numeric-aware sort).
struct PreparedModel {
  io::RunConfig config;  // with inferred levels and references
  std::vector<ObservationRecord> records;
  ModelSpec model;
  ModelData data;
};

PreparedModel prepare_model(io::RunConfig config, std::vector<ObservationRecord> records);

struct LoadedFit {
  fs::path dir;
  PreparedModel prepared;
  PosteriorDraws draws;
};

// Reads config.json, data.csv, layout.json and draws.bin from a fit
// directory. Throws DataError when an artifact is missing or inconsistent.
LoadedFit load_fit(const fs::path& dir);

}  // namespace crb::cli
