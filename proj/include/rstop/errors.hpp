#pragma once

#include <stdexcept>
#include <string>

namespace rstop {

/// Raised when a run configuration or input file is structurally invalid
/// (bad field values, inconsistent dimensions, unreadable files).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when a computation produces a non-finite intermediate that cannot
/// be recovered from (overflowing objective, NaN in a fitted coefficient).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace rstop
