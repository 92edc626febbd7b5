#pragma once

#include <stdexcept>
#include <string>

namespace etx {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A layer, kernel or experiment was configured with impossible geometry or values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data is out of range (labels, empty datasets, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() through a tensor that was never recorded.
class UsageError : public Error {
 public:
  using Error::Error;
};

// A math function was called outside its domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace etx
