// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace attreval {

// Base of every error raised by the library. Subclasses map onto the CLI exit
// codes: config errors exit 2, state errors exit 3, I/O errors exit 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions do not fit the requested primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A variable was used with a tape it does not belong to.
class GraphError : public Error {
 public:
  using Error::Error;
};

// Object or on-disk state does not allow the operation (unpopulated running
// statistics, missing checkpoint, consumed tape).
class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Model architecture description is inconsistent.
class SpecError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Dataset file could not be read or decoded.
class IngestError : public IoError {
 public:
  using IoError::IoError;
};

// Binary container problems.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace attreval
