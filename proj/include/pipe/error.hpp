#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace riskpipe {

enum class ErrorKind {
  NonFiniteState,
  UnknownSystem,
  BadShape,
  BadAxis,
  KernelTooLarge,
  DomainError,
  NonFiniteGradient,
  NoData,
  InvalidArgument,
  ParseError,
  SchemaError,
  ValueOutOfRange,
  VersionMismatch,
  InconsistentLattice,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::UnknownSystem: return "UnknownSystem";
    case ErrorKind::BadShape: return "BadShape";
    case ErrorKind::BadAxis: return "BadAxis";
    case ErrorKind::KernelTooLarge: return "KernelTooLarge";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NoData: return "NoData";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::InconsistentLattice: return "InconsistentLattice";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Parse errors carry the 1-based line number of the offending input.
class ParseFailure : public Error {
 public:
  ParseFailure(ErrorKind kind, std::size_t line, const std::string& message)
      : Error(kind, "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Templated so that literal messages are not turned into std::string on the
// hot path; only a failing check pays for the message.
template <class Message>
inline void require(bool condition, ErrorKind kind, Message&& message) {
  if (!condition) throw Error(kind, std::string(std::forward<Message>(message)));
}

}  // namespace riskpipe
