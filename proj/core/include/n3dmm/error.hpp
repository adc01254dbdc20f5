#pragma once

#include <stdexcept>
#include <string>

namespace n3dmm {

// Malformed input data: unreadable files, invalid meshes, topology drift.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Array shape or parameter mismatches in the numeric engine.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or diverging optimisation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration values or command usage.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace n3dmm
