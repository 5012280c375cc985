#pragma once

#include <stdexcept>
#include <string>

namespace peftkit {

// Base of every toolkit exception.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor shape disagreement; the message names both shapes.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Bad enum value, flag combination, or missing configuration symbol.
class ConfigError : public Error {
public:
  using Error::Error;
};

// API precondition violated (e.g. non-scalar loss fed to backward).
class ContractError : public Error {
public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
public:
  using Error::Error;
};

// Store/mask/gradient structures do not line up; message lists offenders.
class AlignmentError : public Error {
public:
  using Error::Error;
};

// Training run failed (divergence); message carries the epoch index.
class TrainingError : public Error {
public:
  using Error::Error;
};

// Filesystem write failure.
class IoError : public Error {
public:
  using Error::Error;
};

// Parse/load failures, split by cause so callers can tell them apart.
class LoadError : public Error {
public:
  using Error::Error;
};

class CorruptFileError : public LoadError {
public:
  using LoadError::LoadError;
};

class VersionError : public LoadError {
public:
  using LoadError::LoadError;
};

class MetaMismatchError : public LoadError {
public:
  using LoadError::LoadError;
};

class DuplicateNameError : public LoadError {
public:
  using LoadError::LoadError;
};

}  // namespace peftkit
