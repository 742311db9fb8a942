#pragma once

#include <stdexcept>
#include <string>

namespace stereocorr {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/axis mismatches. Messages name the offending axis.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid architecture, patch size, flag combination, ...
struct ConfigError : Error {
    using Error::Error;
};

// Corrupt or unsupported file content (checkpoint, PNG, dataset layout).
struct FormatError : Error {
    using Error::Error;
};

// NaN loss and similar numeric failures.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace stereocorr
