#pragma once

#include <stdexcept>
#include <string>

namespace imageflow {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid user-facing configuration (bad sizes, ratios, unknown keys).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor shape does not match the configured contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite state encountered while integrating a latent.
class IntegrationError : public Error {
public:
    IntegrationError(std::size_t layer, std::int64_t step, const std::string& what)
        : Error(what), layer_(layer), step_(step) {}

    std::size_t layer() const noexcept { return layer_; }
    std::int64_t step() const noexcept { return step_; }

private:
    std::size_t layer_;
    std::int64_t step_;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace imageflow
