#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qairn {

enum class ErrorKind {
  Config,
  Dimension,
  Input,
  Codec,
  Parse,
  Validation,
  Io,
  Corruption,
  Incompatible,
  ShapeMismatch,
  NonFinite,
  UndefinedCorrelation,
};

std::string_view to_string(ErrorKind kind);

/// Base exception for every failure surfaced by the library. The kind is the
/// category printed by the CLI and mapped onto its exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace qairn
