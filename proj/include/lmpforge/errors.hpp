#pragma once

#include <stdexcept>
#include <string>

namespace lmpforge {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor/layer shape violations. The message names the offending axes.
struct DimensionError : Error {
    using Error::Error;
};

/// Bad configuration values (CLI flags, JSON config, SynthSpec).
struct ConfigError : Error {
    using Error::Error;
};

/// CSV/grid-map ingestion problems (unknown node, gaps, bad timestamps).
struct IngestError : Error {
    using Error::Error;
};

/// API misuse (backward before forward, missing history, ...).
struct UsageError : Error {
    using Error::Error;
};

/// Runtime failures during training (NaN loss, checkpoint IO).
struct TrainError : Error {
    using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

}  // namespace lmpforge
