#pragma once

#include <stdexcept>
#include <string>

namespace vie {

/// Bad argument or precondition detected before any numerics run.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Failure of a numerical procedure (base for the solver errors below).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotInvertible : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class InconsistentData : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NumericFailure : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class EmptyFunnel : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NotStable : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class PreconditionViolated : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Iteration cap reached; carries the last measured residual.
class NonConvergence : public NumericalError {
public:
    NonConvergence(const std::string& what, double last_residual)
        : NumericalError(what + " (last residual " + std::to_string(last_residual) + ")"),
          last_residual_(last_residual) {}

    double last_residual() const noexcept { return last_residual_; }

private:
    double last_residual_;
};

}  // namespace vie
