#pragma once

#include <stdexcept>
#include <string>

namespace mocomr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument value (radius 0, T too small, empty list, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Shapes or grids that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, zero variance, corrupted payloads.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Configuration parse or validation failure; `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Missing, stale or corrupted pipeline artifact.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

/// Re-running a stage with identical inputs produced different bytes.
class NondeterminismError : public Error {
 public:
  using Error::Error;
};

}  // namespace mocomr
