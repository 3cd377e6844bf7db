#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace poolnas {

/// Input violates a documented precondition or invariant.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Exact integer arithmetic would overflow.
class OverflowError : public std::overflow_error {
public:
    using std::overflow_error::overflow_error;
};

/// Iterative procedure stopped at its iteration limit.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double final_residual)
        : std::runtime_error(what), final_residual_(final_residual) {}

    double final_residual() const noexcept { return final_residual_; }

private:
    double final_residual_;
};

/// NaN or infinity produced inside a numeric kernel.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input document; position is a byte offset or a 1-based line.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t position)
        : std::runtime_error(what), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// Backend failure while evaluating a (configuration, model) pair.
class EvaluationError : public std::runtime_error {
public:
    EvaluationError(const std::string& what, std::size_t config, std::size_t model)
        : std::runtime_error(what), config_(config), model_(model) {}

    std::size_t config() const noexcept { return config_; }
    std::size_t model() const noexcept { return model_; }

private:
    std::size_t config_;
    std::size_t model_;
};

/// A search run stopped early; `step` is the iteration that failed.
class RunAborted : public std::runtime_error {
public:
    RunAborted(const std::string& what, std::int64_t step)
        : std::runtime_error(what), step_(step) {}

    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

}  // namespace poolnas
