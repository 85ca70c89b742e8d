#pragma once

#include <stdexcept>
#include <string>

namespace thinkgen {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct NumericsError : std::runtime_error {
    explicit NumericsError(const std::string& msg) : std::runtime_error("numerics error: " + msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct DeterminismError : std::runtime_error {
    explicit DeterminismError(const std::string& msg) : std::runtime_error("determinism error: " + msg) {}
};

struct VocabError : std::runtime_error {
    explicit VocabError(const std::string& msg) : std::runtime_error("vocab error: " + msg) {}
};

struct SceneError : std::runtime_error {
    explicit SceneError(const std::string& msg) : std::runtime_error("scene error: " + msg) {}
};

struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error("generation error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

} // namespace thinkgen
