#pragma once

#include <stdexcept>
#include <string>

namespace agrimae {

// Shape/contract violations on tensor operations. Messages carry both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad configuration or CLI input. Maps to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values where finite math was required (divergence, bad input).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File I/O and format failures. Messages name the offending file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace agrimae
