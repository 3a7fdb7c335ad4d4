#pragma once

#include <stdexcept>
#include <string>

namespace voxsurf {

/// Base class for every failure raised by the library. Messages are short and
/// stable so callers (and the CLI) can match on them.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GridError : public Error {
 public:
  using Error::Error;
};

class FieldError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace voxsurf
