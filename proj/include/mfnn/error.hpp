#pragma once

#include <stdexcept>
#include <string>

namespace mfnn {

enum class ErrorKind {
    invalid_domain,
    dimension_mismatch,
    unsupported_primitive,
    divergence,
    config_invalid,
    io,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the library; `kind()` lets callers map failures
// to exit codes without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::invalid_domain: return "invalid-domain";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::unsupported_primitive: return "unsupported-primitive";
    case ErrorKind::divergence: return "numerical-divergence";
    case ErrorKind::config_invalid: return "config-invalid";
    case ErrorKind::io: return "io";
    }
    return "unknown";
}

} // namespace mfnn
