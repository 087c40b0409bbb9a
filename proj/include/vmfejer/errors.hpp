#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vmfejer {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: dimension mismatch, asymmetric matrix, schema violation.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A hypothesis of a theorem-level check failed (e.g. a Loewner ordering).
class HypothesisError : public Error {
 public:
  HypothesisError(std::string condition, const std::string& what)
      : Error(what), condition_(std::move(condition)) {}
  const std::string& condition() const noexcept { return condition_; }

 private:
  std::string condition_;
};

/// A claimed fixed point is not fixed by the operator.
class BadWitness : public Error {
 public:
  using Error::Error;
};

/// An operator handed to a solver fails the class membership check.
class BadOperator : public Error {
 public:
  using Error::Error;
};

/// An inner numerical procedure did not reach its tolerance.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

  // Iteration of the outer solver at which the failure happened, if any.
  std::ptrdiff_t iteration = -1;

 private:
  double residual_;
};

}  // namespace vmfejer
