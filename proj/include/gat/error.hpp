#pragma once

#include <stdexcept>
#include <string>

namespace gat {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN propagation, non-finite loss and similar numeric failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or hyperparameter values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset file problems. `kind()` distinguishes the failure.
class DataError : public Error {
 public:
  enum class Kind { kNoHeader, kMalformed, kInconsistent, kBadLabel, kVersion, kIo };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Checkpoint file problems. `kind()` distinguishes the failure.
class CheckpointError : public Error {
 public:
  enum class Kind { kBadMagic, kVersion, kTruncated, kInconsistent, kIo };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace gat
