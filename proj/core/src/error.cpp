#include "symdiff/error.hpp"

namespace symdiff {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse_error";
    case ErrorKind::kUnsupported: return "unsupported";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kOutOfRange: return "out_of_range";
    case ErrorKind::kDomain: return "domain_error";
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kVersionMismatch: return "version_mismatch";
    case ErrorKind::kIo: return "io_error";
    case ErrorKind::kDiverged: return "diverged";
    case ErrorKind::kCancelled: return "cancelled";
    case ErrorKind::kNotFound: return "not_found";
  }
  return "unknown";
}

ParseError::ParseError(std::size_t offset, const std::string& message)
    : Error(ErrorKind::kParse,
            message + " (at byte " + std::to_string(offset) + ")"),
      offset_(offset) {}

}  // namespace symdiff
