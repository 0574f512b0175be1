#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vaalab {

// Parameter/batch shape does not match the model layout.
struct LayoutError : std::runtime_error {
    explicit LayoutError(const std::string& msg) : std::runtime_error(msg) {}
};

// A loss, gradient or weight became non-finite. Carries the example id
// (and training step, when known) that produced the value.
struct NumericError : std::runtime_error {
    NumericError(const std::string& msg, long long example_id = -1, long long step = -1)
        : std::runtime_error(msg), example_id(example_id), step(step) {}
    long long example_id;
    long long step;
};

// Bad configuration: invalid field values, unknown keys, missing inputs.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file. line is 1-based, 0 when not applicable.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg, std::size_t line = 0)
        : std::runtime_error(msg), line(line) {}
    std::size_t line;
};

// Mathematical precondition violated (KL support, step size, lambda range).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failure while reading or writing an artifact.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vaalab
