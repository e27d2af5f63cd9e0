#pragma once

#include <stdexcept>
#include <string>

namespace astsed {

// Every library failure derives from Error. exit_code() follows the CLI
// contract: 2 configuration, 3 data, 4 numerical.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

// Mismatched parameter trees or checkpoints.
class StructuralError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class InputError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class EvaluationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace astsed
