#pragma once

#include <stdexcept>
#include <string>

namespace cftwin {

// Precondition on an argument or shape was violated.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input is well-formed but numerically degenerate (e.g. constant grid).
class DegenerateInputError : public DomainError {
public:
    using DomainError::DomainError;
};

// A constraint set has no solution (e.g. pruning budget above prunable mass).
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A file on disk does not follow the expected container layout.
class FormatError : public std::runtime_error {
public:
    enum class Kind { bad_magic, bad_header, shape_mismatch, truncated, io };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training or sampling hit a non-finite state.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cftwin
