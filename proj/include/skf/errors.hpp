/**
 * @file errors.hpp
 * @brief Exception types shared by all modules.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace skf {

/// Bad caller input: mismatched dimensions, non-finite values, empty maps.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: unknown provider, out-of-range settings.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Corrupt, truncated or version-mismatched file.
class LoadError : public std::runtime_error {
public:
    LoadError(const std::string& file, const std::string& what)
        : std::runtime_error(file + ": " + what), file_(file) {}
    const std::string& file() const { return file_; }

private:
    std::string file_;
};

/// Training stopped because a loss term became non-finite.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& component, long step)
        : std::runtime_error("non-finite " + component + " loss at step " + std::to_string(step)),
          component_(component), step_(step) {}
    const std::string& component() const { return component_; }
    long step() const { return step_; }

private:
    std::string component_;
    long step_;
};

}  // namespace skf
