#pragma once

#include <stdexcept>
#include <string>

namespace scob {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad keys or values, unusable font directory,
// incompatible checkpoint or vocabulary.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data violates a precondition (out-of-charset text,
// missing boxes where they are required, malformed manifest line).
class InputError : public Error {
 public:
  using Error::Error;
};

// Numeric argument outside its domain.
class RangeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class NumericAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace scob
