#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vshm {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments or violated preconditions (maps to CLI exit code 2).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// State became non-finite during ODE integration.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& msg, std::size_t step)
        : Error(msg + " (step " + std::to_string(step) + ")"), step_index(step) {}
    std::size_t step_index;
};

// Regression matrix numerically rank deficient.
class IllPosedError : public Error {
public:
    IllPosedError(const std::string& msg, long rank)
        : Error(msg + " (numerical rank " + std::to_string(rank) + ")"), numerical_rank(rank) {}
    long numerical_rank;
};

// Modal or statistical estimation could not produce a usable value.
class EstimationError : public Error {
public:
    explicit EstimationError(const std::string& msg) : Error(msg) {}
};

// Filesystem / serialization failure, with path context.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

} // namespace vshm
