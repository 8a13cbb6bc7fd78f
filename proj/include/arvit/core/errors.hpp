#pragma once

#include <stdexcept>
#include <string>

namespace arvit {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that cannot be combined by an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid architecture / experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition (non-scalar loss, empty batch...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad data handed to an operation (labels outside {0,1}, missing mask...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Dataset could not be read or validated.
class DataError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace arvit
