#pragma once

#include <stdexcept>
#include <string>

namespace afp {

// Exception hierarchy. The CLI maps each family to an exit code:
// usage/config -> 1, format/io -> 2, numerical -> 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed arguments that violate an operation's contract.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent geometry or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced during optimization or training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace afp
