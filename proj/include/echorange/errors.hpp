#pragma once

#include <stdexcept>
#include <string>

namespace echorange {

// Error taxonomy shared across modules. The CLI maps these onto exit codes:
// ConfigError -> 2, IoError -> 3, IncompatibleError -> 4, anything else -> 1.

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnsupportedError : std::runtime_error {
    explicit UnsupportedError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CorruptFileError : std::runtime_error {
    explicit CorruptFileError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NoDataError : std::runtime_error {
    explicit NoDataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IncompatibleError : std::runtime_error {
    explicit IncompatibleError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace echorange
