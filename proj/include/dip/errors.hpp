// errors.hpp
#pragma once

#include <stdexcept>
#include <string>

namespace dip {

/// Invalid architecture, shape or run configuration.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error("config: " + what) {}
};

/// Genome or checkpoint stream that fails its version or checksum checks.
class CorruptDataError : public std::runtime_error {
public:
    explicit CorruptDataError(const std::string& what) : std::runtime_error("corrupt: " + what) {}
};

/// Environment or agent failure during a rollout.
class EvaluationError : public std::runtime_error {
public:
    explicit EvaluationError(const std::string& what) : std::runtime_error("evaluation: " + what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error("io: " + what) {}
};

} // namespace dip
