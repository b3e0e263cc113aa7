#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace symdiff {

enum class ErrorKind {
  kParse,
  kUnsupported,
  kInvalidArgument,
  kOutOfRange,
  kDomain,
  kShapeMismatch,
  kVersionMismatch,
  kIo,
  kDiverged,
  kCancelled,
  kNotFound,
};

std::string_view to_string(ErrorKind kind);

// Base error for everything the library throws. `kind()` is stable and is
// what the CLI and service map onto structured error payloads.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Malformed MIDI or token container; carries the byte offset of the fault.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& message);

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace symdiff
