#pragma once

#include <stdexcept>
#include <string>

namespace enrf {

/// Bad caller input: dimension mismatch, non-finite value, out-of-range parameter.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A matrix that must be SPD failed to factorize even after the jitter retry.
class SingularError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iterative solver hit its iteration cap; carries the last residual.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

/// Adaptive integrator step size underflowed.
class StiffnessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Requested moment does not exist for the given degree of freedom.
class MomentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every tuning cell diverged; carries a printable table of what was tried.
class TuningError : public std::runtime_error {
public:
    TuningError(const std::string& what, std::string table)
        : std::runtime_error(what), table_(std::move(table)) {}
    const std::string& table() const { return table_; }

private:
    std::string table_;
};

/// Filesystem failure, annotated with the offending path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace enrf
