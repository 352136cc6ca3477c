#pragma once

#include <stdexcept>
#include <string>

namespace ertte {

// Error taxonomy shared by the library and the CLI exit-code mapping.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad flags, invalid parameter combinations, impossible partitions.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or inconsistent input data (routes, files, schemas).
struct DataError : Error {
    using Error::Error;
};

// Non-finite values encountered during computation.
struct NumericError : Error {
    using Error::Error;
};

// API misuse: backward without a forward pass, invalid cache, ...
struct StateError : Error {
    using Error::Error;
};

// Violated structural invariant (interval ordering, cumulative monotonicity).
struct InvariantError : Error {
    using Error::Error;
};

// Lookup of a route/profile that is not in the store.
struct NotFoundError : Error {
    using Error::Error;
};

// A live profile already exists for the key.
struct ConflictError : Error {
    using Error::Error;
};

// Index outside a profile's checkpoint range.
struct RangeError : Error {
    using Error::Error;
};

// CLI exit codes. 0 is success.
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

}  // namespace ertte
