#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcilt {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// bad user-facing configuration (CLI flags, plan descriptions, fn ids)
struct ConfigError : Error {
    using Error::Error;
};

// tensor/filter/bank geometry or cardinality disagreement
struct ShapeError : Error {
    using Error::Error;
};

// arithmetic overflow or a value outside its declared domain
struct RangeError : Error {
    using Error::Error;
};

// corrupt or truncated on-disk data; `offset` is the byte where parsing failed
struct ParseError : Error {
    std::size_t offset;
    ParseError(const std::string& msg, std::size_t at)
        : Error(msg + " (byte offset " + std::to_string(at) + ")"), offset(at) {}
};

// an operation was issued against stale runtime state (e.g. an outdated trace)
struct StateError : Error {
    using Error::Error;
};

// kernels disagreed where they must match bit for bit
struct VerifyError : Error {
    using Error::Error;
};

} // namespace pcilt
