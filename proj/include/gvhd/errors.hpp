#pragma once

#include <stdexcept>
#include <string>

namespace gvhd {

// Shape/width disagreement between tensors or between data and config.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated an operation's precondition (non-scalar loss, missing mask, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (even kernel, unknown key, bad fold count, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// On-disk cohort does not match its manifest.
struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// A metric is undefined for the given inputs (single-class AUC, ...).
struct UndefinedMetricError : std::runtime_error {
    explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training cannot proceed (no positives in split, NaN gradient, ...).
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gvhd
