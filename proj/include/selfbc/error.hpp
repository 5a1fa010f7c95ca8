#pragma once

#include <stdexcept>
#include <string>

namespace selfbc {

// Precondition violated by a caller-supplied value.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure (singular system, non-finite result).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LoadErrorKind { kIo, kMagicMismatch, kVersionMismatch, kTruncated, kChecksum, kFormat, kArchitecture };

inline const char* to_string(LoadErrorKind kind) {
  switch (kind) {
    case LoadErrorKind::kIo: return "io";
    case LoadErrorKind::kMagicMismatch: return "magic mismatch";
    case LoadErrorKind::kVersionMismatch: return "version mismatch";
    case LoadErrorKind::kTruncated: return "truncated";
    case LoadErrorKind::kChecksum: return "checksum mismatch";
    case LoadErrorKind::kFormat: return "format";
    case LoadErrorKind::kArchitecture: return "architecture mismatch";
  }
  return "unknown";
}

class LoadError : public std::runtime_error {
 public:
  LoadError(LoadErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  LoadErrorKind kind() const noexcept { return kind_; }

 private:
  LoadErrorKind kind_;
};

}  // namespace selfbc
