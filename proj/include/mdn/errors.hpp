#pragma once

#include <stdexcept>
#include <string>

namespace mdn {

// Input violates an operation's preconditions (bad shape, out-of-range index, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent configuration (network config, train config, method ids).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be read, written or parsed. Messages carry the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or other numerical breakdown during training/inference.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Image cannot be processed because it carries no usable signal (e.g. constant crop).
class DegenerateInput : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

}  // namespace mdn
