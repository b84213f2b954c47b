#pragma once

#include <stdexcept>
#include <string>

namespace storyviz {

// Base of every exception thrown by the library. The CLI maps these to
// exit code 2; usage problems never reach here.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or hyper-parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor or container shapes that do not satisfy a documented contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Index outside of its valid range.
class BoundsError : public Error {
 public:
  using Error::Error;
};

// Filesystem or encoding failure. The message always names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, failed numerical preconditions (PSD, masks, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Artifact written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace storyviz
