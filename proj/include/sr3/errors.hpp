#pragma once

#include <stdexcept>
#include <string>

namespace sr3 {

/// Invalid shapes, out-of-range arguments, violated preconditions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable, unwritable or malformed files. The message names the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint or other binary container with a bad magic, version or checksum.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// NaN/Inf encountered in a loss, gradient or activation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sr3
