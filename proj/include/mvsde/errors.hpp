#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mvsde {

// Base of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Array or cloud dimensions disagree with the model or with each other.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A coefficient or statistic produced a non-finite value.
class NumericError : public Error {
public:
    using Error::Error;
};

// Invalid or missing configuration (model parameters, grid sizes, experiment settings).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Input outside the mathematical domain of a routine (e.g. log of a nonpositive value).
class DomainError : public Error {
public:
    using Error::Error;
};

// Not enough distinct data to determine a result.
class DegeneracyError : public Error {
public:
    using Error::Error;
};

// A documented capability limit was exceeded.
class CapabilityError : public Error {
public:
    using Error::Error;
};

// A particle state blew up or became non-finite while stepping.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    [[nodiscard]] std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace mvsde
