#pragma once

#include <stdexcept>
#include <string>

namespace briges {

// Shape or width mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Out-of-range scalar argument (tau <= 0, zero target size, odd pooling grid).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse: non-scalar backward, mismatched graphs, gradient/parameter set mismatch.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid input data (non-positive depth, out-of-bounds pixel).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input on which a normalization or fit is undefined (zero range, zero variance).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite value produced during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable, truncated or inconsistent file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration entry; key() names the offending key.
class ConfigError : public ParameterError {
 public:
  ConfigError(std::string key, const std::string& what) : ParameterError(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace briges
