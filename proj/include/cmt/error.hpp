#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cmt {

/// Base class for every error the toolkit raises.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input record. `line()` is 1-based; 0 when not line-oriented.
class ParseError : public Error {
  public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line)
    {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class DuplicateError : public ParseError {
  public:
    using ParseError::ParseError;
};

/// Invalid hyperparameter or configuration value.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// A required artifact or input is missing.
class DependencyError : public Error {
  public:
    using Error::Error;
};

/// Non-finite loss, gradient or similarity.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// Operation is undefined for its input (empty index, no judged queries, ...).
class InvalidInput : public Error {
  public:
    using Error::Error;
};

/// Query generation could not produce any term.
class GenerationError : public Error {
  public:
    using Error::Error;
};

}  // namespace cmt
