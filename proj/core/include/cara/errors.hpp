#pragma once

#include <stdexcept>
#include <string>

namespace cara {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment or model configuration. `key()` names the offending
/// configuration entry (dotted path) when one is known.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key.empty() ? message : "'" + key + "': " + message),
        key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An asymptotic information matrix is singular or too ill-conditioned to invert.
class SingularInformationError : public Error {
 public:
  SingularInformationError(int arm, const std::string& message)
      : Error("arm " + std::to_string(arm + 1) + ": " + message), arm_(arm) {}

  int arm() const noexcept { return arm_; }

 private:
  int arm_;
};

class ZeroMassCovariateError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cara
