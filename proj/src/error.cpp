#include "sphereflow/error.hpp"

namespace sphereflow {

std::string_view category_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InputNotFound: return "input-not-found";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::BadFormat: return "bad-format";
    case ErrorKind::Degenerate: return "degenerate-geometry";
    case ErrorKind::Numeric: return "numeric-failure";
    case ErrorKind::Io: return "io-failure";
    case ErrorKind::Internal: return "internal";
  }
  return "internal";
}

}  // namespace sphereflow
