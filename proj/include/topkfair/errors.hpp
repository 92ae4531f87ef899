#pragma once

#include <stdexcept>
#include <string>

namespace topkfair {

/// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid hyperparameter, dimension or flag combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input row; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Structural problem with a dataset (duplicates, empty input).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Query or item id outside the model's tables.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Estimator state missing or inconsistent with the batch.
class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity reached a gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace topkfair
