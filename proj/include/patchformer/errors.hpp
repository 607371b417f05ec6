#pragma once

#include <stdexcept>
#include <string>

namespace patchformer {

// Every library failure derives from Error so callers can catch one type.
// The CLI maps the subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or axis disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, unknown channel names, incompatible checkpoints.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed input data (CSV, windows, series too short).
class DataError : public Error {
 public:
  using Error::Error;
};

// Positional table too small for the requested number of patches.
class CapacityError : public DimensionError {
 public:
  using DimensionError::DimensionError;
};

// Non-finite values, divergence, failed gradient checks.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A function assumed deterministic returned different values on repeat calls.
class DeterminismError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Optimizer misuse, e.g. stepping a parameter that never received a gradient.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace patchformer
