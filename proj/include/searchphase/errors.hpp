#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace searchphase {

// Bad argument to a pure function (negative degree, wrong parity, ...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Inconsistent numerical settings, e.g. a quadrature too short for K_max.
class ConfigurationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unknown activation or lookup key.
class LookupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// r collapsed to zero, or a function has no nonzero coefficient.
class DegenerateStateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalBlowup : public std::runtime_error {
public:
    NumericalBlowup(const std::string& what, std::int64_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::int64_t step() const { return step_; }

private:
    std::int64_t step_;
};

class AlignmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Plan validation failure; carries every offending field.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(std::vector<std::string> fields)
        : std::runtime_error(join(fields)), fields_(std::move(fields)) {}
    const std::vector<std::string>& fields() const { return fields_; }

private:
    static std::string join(const std::vector<std::string>& f) {
        std::string s = "invalid configuration:";
        for (const auto& x : f) s += "\n  " + x;
        return s;
    }
    std::vector<std::string> fields_;
};

}  // namespace searchphase
