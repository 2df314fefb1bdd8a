// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace echomae {

// Base of every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument values. CLI exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Out-of-range or inconsistent operation parameters (bad mask ratio,
// zero std, ellipse outside frame, ...).
struct ParameterError : ConfigError {
  using ConfigError::ConfigError;
};

// Problems with input data or files on disk. CLI exit code 3.
struct DataError : Error {
  using Error::Error;
};

// Malformed container bytes (bad magic, truncated payload, zero dims).
struct FormatError : DataError {
  using DataError::DataError;
};

// Semantically invalid data (EF out of range, duplicate names, ...).
struct ValidationError : DataError {
  using DataError::DataError;
};

struct IoError : DataError {
  using DataError::DataError;
};

// Checkpoint tensor-name schema does not match the model config.
struct SchemaError : DataError {
  using DataError::DataError;
};

// Too few samples for the requested statistic.
struct InsufficientDataError : DataError {
  using DataError::DataError;
};

// Clip shorter than a rate-based sampling window.
struct InsufficientFramesError : DataError {
  using DataError::DataError;
};

// Numeric failure: non-finite values, gradient-check failure. CLI exit code 4.
struct NumericError : Error {
  using Error::Error;
};

// Violations of call contracts (shape mismatch, double backward, bad index).
struct DimensionError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

}  // namespace echomae
