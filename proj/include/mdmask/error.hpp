#pragma once

#include <stdexcept>
#include <string>

namespace mdmask {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape / dimension mismatches and invalid op geometry.
struct DimensionError : Error {
    using Error::Error;
};

// Malformed or corrupt files (magic, CRC, truncation, digest mismatch).
struct FormatError : Error {
    using Error::Error;
};

// Bad configuration: unknown variants, invalid arch specs, flag misuse.
struct ConfigError : Error {
    using Error::Error;
};

// Runtime training failures (NaN gradients, dataset/domain mismatch).
struct TrainError : Error {
    using Error::Error;
};

} // namespace mdmask
