#pragma once

#include <stdexcept>
#include <string>

namespace hitl {

// Malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad, missing, or corrupt data on disk or on the wire (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Singular evaluations, failed factorizations, unsatisfiable constraints.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hitl
