#pragma once

#include <stdexcept>
#include <string>

namespace ncp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched shapes, empty inputs, out-of-range arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered in a loss, gradient or model output.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-system failures and malformed binary files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ncp
