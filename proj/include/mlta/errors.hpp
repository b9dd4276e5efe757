#pragma once

#include <stdexcept>
#include <string>

namespace mlta {

// Error categories map onto the CLI exit codes: configuration problems
// (bad flags, unreadable or malformed rule files), data problems (values
// that violate a declared schema, degenerate matrices), and numerical
// failures (diverged or aborted estimation).

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mlta
