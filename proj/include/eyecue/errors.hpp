#pragma once

#include <stdexcept>
#include <string>

namespace eyecue {

/// Bad input: wrong shapes, out-of-range values, malformed files.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input is well-formed but the requested action is not allowed.
class PolicyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A token provider cannot satisfy the dense per-frame token contract.
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eyecue
