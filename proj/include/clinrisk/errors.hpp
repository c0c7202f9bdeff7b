#pragma once

#include <stdexcept>
#include <string>

namespace clinrisk {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shapes do not line up (always names the offending shapes).
struct DimensionError : Error {
  using Error::Error;
};

// An API precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Bad configuration value (window size, fractions, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data.
struct DataError : Error {
  using Error::Error;
};

// Checkpoint file cannot be read or does not match the model.
struct CheckpointError : Error {
  using Error::Error;
};

// NaN or infinity where a finite number was required.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace clinrisk
