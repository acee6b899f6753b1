#pragma once

#include <stdexcept>
#include <string>

namespace crb {

// Invalid argument to a density, pmf or transform.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed run configuration or unsupported model layout.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violating the declared schema (bad level, out-of-range count, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sampler could not initialise or every warm-up transition diverged.
class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace crb
