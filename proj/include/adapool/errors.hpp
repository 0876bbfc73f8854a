#pragma once

#include <stdexcept>
#include <string>

namespace adapool {

/// Malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, malformed or dimensionally inconsistent data (exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss (exit code 4).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int last_finite_epoch)
      : std::runtime_error(what), last_finite_epoch_(last_finite_epoch) {}

  /// Last epoch (1-based) that completed with a finite loss, 0 if none.
  int last_finite_epoch() const noexcept { return last_finite_epoch_; }

 private:
  int last_finite_epoch_;
};

/// Violation of the TRAIN/VAL/TEST protocol, e.g. a second TEST pass (exit code 5).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace adapool
