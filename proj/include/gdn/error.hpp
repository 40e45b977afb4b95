#pragma once

#include <stdexcept>
#include <string>

namespace gdn {

// Error categories map onto CLI exit codes (see run_cli).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad input data: unreadable images, malformed files, inconsistent ids.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed or incompatible checkpoint / artifact.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// NaN or Inf produced during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace gdn
