#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace physbench {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A vector or array did not have the expected length or shape.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Two mesh particles joined by a spring occupy the same point.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// A state or prediction became non-finite while stepping.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Newton iteration for an implicit step did not reach the tolerance.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// The requested operation is not defined for this system (e.g. leapfrog on
/// a state without a position/momentum split).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling for obstacle placement ran out of attempts.
class SamplingExhaustedError : public Error {
 public:
  using Error::Error;
};

/// Input failed a validation rule (bad configuration, duplicate names, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The ridge normal matrix could not be factorized.
class IllConditionedError : public Error {
 public:
  using Error::Error;
};

}  // namespace physbench
