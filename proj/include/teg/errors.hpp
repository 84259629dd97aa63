#pragma once

#include <stdexcept>
#include <string>

namespace teg {

// Base class for all library errors. The CLI maps each subclass to a
// distinct process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated a documented precondition (shape mismatch, empty input,
// out-of-range argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (e.g. head count does not divide the feature width).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents: bad magic, unsupported version, truncated payload.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Filesystem or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given input (e.g. ROC-AUC with one class).
class MetricError : public Error {
 public:
  using Error::Error;
};

// Non-finite value where a finite one is required (diverged loss, bad input).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace teg
