#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lvr {

enum class ErrorKind {
  kDimension,
  kNumeric,
  kContract,
  kCapacity,
  kFormat,
  kConfig,
  kGeneration,
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension_error";
    case ErrorKind::kNumeric: return "numeric_error";
    case ErrorKind::kContract: return "contract_error";
    case ErrorKind::kCapacity: return "capacity_error";
    case ErrorKind::kFormat: return "format_error";
    case ErrorKind::kConfig: return "config_error";
    case ErrorKind::kGeneration: return "generation_error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by binary readers; carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t offset)
      : Error(ErrorKind::kFormat,
              message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace lvr
