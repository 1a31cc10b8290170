#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nedkit {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed arguments: non-finite entries, violated ordering, bad parameters.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Truncated-domain quadrature could not meet the requested tail tolerance.
class TailToleranceError : public Error {
public:
    using Error::Error;
};

/// Discretization or scenario settings that cannot deliver the contract.
class ConfigurationError : public Error {
public:
    using Error::Error;
};

/// An evaluator that the operation needs is not available for this family.
class CapabilityError : public Error {
public:
    using Error::Error;
};

class FittingError : public Error {
public:
    using Error::Error;
};

class IntegrationError : public Error {
public:
    IntegrationError(const std::string& what, double time) : Error(what), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Raised when a computed structure fails a consistency diagnostic
/// (e.g. perturbed projections with the wrong rank).
class DiagnosticError : public Error {
public:
    using Error::Error;
};

/// Fixed-point iteration exhausted its budget; carries the observed ratios.
class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& what, std::vector<double> ratios)
        : Error(what), ratios_(std::move(ratios)) {}
    const std::vector<double>& ratios() const noexcept { return ratios_; }

private:
    std::vector<double> ratios_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

}  // namespace nedkit
