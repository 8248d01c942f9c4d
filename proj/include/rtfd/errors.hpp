#pragma once

#include <stdexcept>
#include <string>

namespace rtfd {

/// Shape or axis mismatch detected while building an operation.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Value outside an operation's domain (log of non-positive, bad label, ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File container problems: bad magic, version, checksum, truncation.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite loss or other numeric breakdown during training.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rtfd
