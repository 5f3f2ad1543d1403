#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tsf {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Precondition of an operation was not met (wrong call order, bad arguments).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid hyperparameter or configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

/// Training produced a non-finite loss.
class DivergedError : public std::runtime_error {
 public:
  DivergedError(std::size_t epoch, const std::string& detail)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + detail),
        epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace tsf
