#pragma once

#include <stdexcept>
#include <string>

namespace wkd {

// Exception families map onto the CLI exit codes: ConfigError -> 2,
// DataError -> 3, NumericError -> 4.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration, mismatched model/vocabulary/teacher settings, usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable input files (TSV, EMBv1, TNSv1, manifests).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite losses or gradients, non-PSD covariance, and similar.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace wkd
