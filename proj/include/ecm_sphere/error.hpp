#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ecm_sphere {

enum class ErrorKind {
  invalid_label,
  dimension,
  degenerate_norm,
  contract,
  config,
  format,
  divergence,
  empty_objective,
  degenerate_geometry,
  missing_label,
  undefined_correlation,
  evaluation,
  io,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Format errors carry the byte offset where the file stopped making sense.
class FormatError : public Error {
 public:
  FormatError(std::uint64_t offset, const std::string& message)
      : Error(ErrorKind::format, message + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Raised by training when a loss or gradient turns non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t step, const std::string& message)
      : Error(ErrorKind::divergence, "step " + std::to_string(step) + ": " + message),
        step_(step) {}

  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) throw Error(kind, message);
}

}  // namespace ecm_sphere
