#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace omni {

/// Base for every error raised by the library. Callers that only need a
/// message can catch this; the CLI maps the concrete kinds to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value fell outside its documented domain (e.g. an action component
/// outside [-1, 1]).
class RangeError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Configuration or checkpoint does not match what the caller expects.
class ConfigMismatch : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace omni
