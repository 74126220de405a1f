#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gbpmap {

// Shared error taxonomy. Dimension/id bugs are invalid_argument; numerical
// and protocol conditions a caller may want to catch are runtime_error.

struct DimensionMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct UnknownId : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Precision matrix singular (or conditioning beyond threshold) after jitter.
struct SingularPrecision : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotATree : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Message norms exceeded the configured bound during loopy iteration.
struct DivergenceDetected : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OutOfRange : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotConnected : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoSharedBoundary : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OutOfExtent : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyTestSet : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExtentMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::size_t byte_offset;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gbpmap
