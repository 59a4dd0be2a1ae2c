#pragma once

#include <stdexcept>
#include <string>

namespace transclaw {

// Root of every exception the library throws. The C API maps each subclass
// onto a distinct status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A model/config invariant does not hold (divisibility, head split, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Corrupt or truncated binary/JSON input, bad magic, version mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure (missing path, unwritable output).
class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by an operation, or a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the differentiation graph (detached tensor, non-scalar loss,
// missing gradient).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Argument outside its documented domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace transclaw
