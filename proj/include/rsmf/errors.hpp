#pragma once

#include <stdexcept>
#include <string>

namespace rsmf {

// Exit statuses used by the command-line front end.
enum class ExitStatus : int {
  ok = 0,
  check_failed = 1,
  config_error = 2,
  capacity_or_iteration = 3,
};

/// Argument outside the mathematical domain of an operation (q < 0, z >= 1, u <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed call arguments (too-short grids, mismatched sizes).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition does not hold (e.g. a boundary starting point).
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Problem size exceeds a configured cap.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative solver stopped at its sweep limit.
class IterationLimitError : public std::runtime_error {
 public:
  IterationLimitError(const std::string& what, double last_residual)
      : std::runtime_error(what), last_residual_(last_residual) {}
  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

/// Per-state root of the risk-sensitive equation is not bracketed.
class BracketError : public std::runtime_error {
 public:
  BracketError(const std::string& what, long state)
      : std::runtime_error(what), state_(state) {}
  long state() const noexcept { return state_; }

 private:
  long state_;
};

/// Monte Carlo estimation impossible (every trial censored).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A check needs model data that is absent.
class UnsupportedCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Simulation reached a non-target state with zero total jump rate.
class StuckStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Integrator produced a coordinate far below zero; the step is too large.
class StepSizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration could not be loaded or validated.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rsmf
