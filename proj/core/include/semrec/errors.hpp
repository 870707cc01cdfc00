// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace semrec {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kData; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumerical; }
};

/// Malformed input text. `line` is 1-based (0 when unknown); `offset` is a
/// byte offset within the line or string being parsed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::size_t offset = 0);
  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UniquenessError : public Error {
  using Error::Error;
};
class RangeError : public Error {
  using Error::Error;
};
class DomainError : public Error {
  using Error::Error;
};
class UnsupportedError : public Error {
  using Error::Error;
};
class GenerationError : public Error {
  using Error::Error;
};

/// Two items share the same full semantic index.
class ConflictError : public Error {
 public:
  ConflictError(const std::string& first, const std::string& second);
  const std::string& first() const noexcept { return first_; }
  const std::string& second() const noexcept { return second_; }

 private:
  std::string first_;
  std::string second_;
};

/// A prefix group holds more items than there are last-level codes.
class UnresolvableConflictError : public Error {
  using Error::Error;
};

}  // namespace semrec
