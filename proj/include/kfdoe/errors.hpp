#pragma once

#include <stdexcept>
#include <string>

namespace kfdoe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Elastic constants for which the stiffness denominator vanishes.
class SingularParameterization : public Error {
 public:
  using Error::Error;
};

/// Return mapping failed to satisfy the consistency condition.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Non-finite or dimensionally inconsistent filter inputs.
class FilterError : public Error {
 public:
  using Error::Error;
};

/// Singular algebraic Jacobian in the DAE sensitivity assembly.
class IndexViolation : public Error {
 public:
  using Error::Error;
};

/// Data for which a score is undefined (e.g. constant NSE reference data).
class DegenerateData : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration, checkpoint or record file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient while fitting the network.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace kfdoe
