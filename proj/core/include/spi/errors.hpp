#pragma once

#include <stdexcept>
#include <string>

namespace spi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments (maps to CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class AnnotationError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ValidationError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint load failures are distinct types so callers can tell them apart.
class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};
class NotACheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// A stored file does not match what the manifest or geometry promises.
class CorruptionError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace spi
