#pragma once

#include <stdexcept>
#include <string>

namespace omniseq {

// Each family maps to one CLI exit code (see tools/omniseq.cpp).

// Invalid configuration or flags. Exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed, missing or contract-violating input data. Exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf detected in a numeric pass. Exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between matrix operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace omniseq
