#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gmar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or image shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numeric argument outside its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An invalid ViTConfig.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An operation invoked before the data it needs exists (e.g. no tape, no gradients).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API contract (non-scalar loss, mixed tapes, mismatched gradient sets).
class ContractError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  kBadMagic = 1,
  kTruncated = 2,
  kShapeMismatch = 3,
  kInvalidConfig = 4,
  kUnsupported = 5,
  kIo = 6,
};

const char* to_string(FormatErrorKind kind);

/// Malformed file content. Carries the byte offset where decoding stopped.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, std::size_t offset, const std::string& what)
      : Error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) + ": " + what),
        kind_(kind),
        offset_(offset) {}

  FormatErrorKind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  FormatErrorKind kind_;
  std::size_t offset_;
};

inline const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic:
      return "bad magic";
    case FormatErrorKind::kTruncated:
      return "truncated";
    case FormatErrorKind::kShapeMismatch:
      return "shape mismatch";
    case FormatErrorKind::kInvalidConfig:
      return "invalid config";
    case FormatErrorKind::kUnsupported:
      return "unsupported";
    case FormatErrorKind::kIo:
      return "io error";
  }
  return "format error";
}

}  // namespace gmar
