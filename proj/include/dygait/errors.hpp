#pragma once

#include <stdexcept>
#include <string>

// Error taxonomy shared across modules. The CLI maps these onto its exit-code
// contract: usage 2, I/O 3, divergence 4, empty protocol 5, check failure 1.

namespace dygait {

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SequenceError : std::runtime_error {
    explicit SequenceError(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateBatchError : std::runtime_error {
    explicit DegenerateBatchError(const std::string& what) : std::runtime_error(what) {}
};

struct DivergenceError : std::runtime_error {
    long step;
    explicit DivergenceError(long step_)
        : std::runtime_error("non-finite loss at step " + std::to_string(step_)), step(step_) {}
};

struct ProtocolEmptyError : std::runtime_error {
    explicit ProtocolEmptyError(const std::string& what) : std::runtime_error(what) {}
};

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dygait
