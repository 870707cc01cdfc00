// SPDX-License-Identifier: Apache-2.0
#include "semrec/errors.hpp"

#include <fmt/format.h>

namespace semrec {

namespace {

std::string with_location(const std::string& what, std::size_t line, std::size_t offset) {
  if (line == 0 && offset == 0) return what;
  if (offset == 0) return fmt::format("line {}: {}", line, what);
  if (line == 0) return fmt::format("offset {}: {}", offset, what);
  return fmt::format("line {}, offset {}: {}", line, offset, what);
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t line, std::size_t offset)
    : Error(with_location(what, line, offset)), line_(line), offset_(offset) {}

SchemaError::SchemaError(const std::string& what, std::size_t line)
    : Error(with_location(what, line, 0)), line_(line) {}

ConflictError::ConflictError(const std::string& first, const std::string& second)
    : Error(fmt::format("items '{}' and '{}' share the same semantic index", first, second)),
      first_(first),
      second_(second) {}

}  // namespace semrec
