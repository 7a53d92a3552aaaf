#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace kgflow {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments to a constructor (non-SPD covariance, empty mixture, ...).
class ConstructionError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// A covariance or reparameterization matrix is singular or too badly
// conditioned to invert.
class SingularCovarianceError : public Error {
 public:
  using Error::Error;
};

class EmptyEnsembleError : public Error {
 public:
  using Error::Error;
};

class UnsupportedKernelError : public Error {
 public:
  using Error::Error;
};

class UnsupportedDimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced during a computation. Flow drivers attach the
// step index at which the failure happened.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what,
                          std::optional<std::size_t> step = std::nullopt)
      : Error(step ? what + " (step " + std::to_string(*step) + ")" : what),
        step_(step) {}

  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  std::optional<std::size_t> step_;
};

// Configuration parse or validation failure. `line` is 1-based, 0 when the
// problem is not tied to a particular line (e.g. a missing key).
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::string key = {}, std::size_t line = 0)
      : Error(format(what, key, line)), key_(std::move(key)), line_(line) {}

  const std::string& key() const noexcept { return key_; }
  std::size_t line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& what, const std::string& key,
                            std::size_t line) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!key.empty()) out += "'" + key + "': ";
    return out + what;
  }

  std::string key_;
  std::size_t line_;
};

}  // namespace kgflow
