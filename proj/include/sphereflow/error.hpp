#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sphereflow {

/// Failure classes. The CLI maps each to an exit code and a category token.
enum class ErrorKind {
  InputNotFound,   // missing file
  InvalidArgument, // bad config value, precondition violated by the caller
  ShapeMismatch,   // dimensions disagree
  BadFormat,       // corrupt / truncated / wrong-magic file
  Degenerate,      // geometric degeneracy (antipodal geodesic)
  Numeric,         // NaN/Inf appeared during computation
  Io,              // write failures
  Internal,
};

std::string_view category_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace sphereflow
