#pragma once

#include <stdexcept>
#include <string>

namespace owf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data failed validation (bad values, broken references, duplicates).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed. Carries the 1-based line (and byte offset
/// when known) where parsing stopped.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t offset = 0)
      : ValidationError(what), line_(line), offset_(offset) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

/// Split configs or run configs that are inconsistent.
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Non-finite activations, losses or parameters.
class NumericFault : public Error {
 public:
  using Error::Error;
};

}  // namespace owf
