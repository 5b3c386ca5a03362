#pragma once

#include <stdexcept>
#include <string>

namespace nse {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not fit the operation.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Malformed input data (corpus files, checkpoints, vocabularies).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Bad configuration or unusable argument values.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// NaN gradients, failed tolerance checks and similar numeric trouble.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace nse
