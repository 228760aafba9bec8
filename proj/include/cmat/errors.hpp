#pragma once

#include <stdexcept>
#include <string>

namespace cmat {

// Bad flags / unknown config strings. CLI exit code 2.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

// Structurally invalid data (graphs, records, checkpoints). CLI exit code 3.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& m) : std::runtime_error(m) {}
};

// Non-finite values where finite math is required. CLI exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace cmat
