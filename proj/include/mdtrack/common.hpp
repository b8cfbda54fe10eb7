#pragma once

#include <stdexcept>
#include <string>

namespace mdtrack {

// Error taxonomy. Every throwing contract in the library maps to one of
// these so callers (and tests) can distinguish bad shapes from bad math
// from bad files.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

// Violated internal contract (corrupt segment map, state/block mismatch, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

// Malformed on-disk payloads. `offset` is the byte position where parsing
// failed, or -1 when the failure is not positional.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg, long long byte_offset = -1)
        : std::runtime_error(byte_offset >= 0
                                 ? "format error at byte " + std::to_string(byte_offset) + ": " + msg
                                 : "format error: " + msg),
          offset(byte_offset) {}
    long long offset = -1;
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};

}  // namespace mdtrack
