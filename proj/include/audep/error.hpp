#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace audep {

enum class ErrorKind {
  MissingColumn,
  ParseError,
  EmptyClip,
  ClipTooShort,
  InvalidConfig,
  DegenerateData,
  SegmentTooShort,
  SingleClassData,
  EmptyVotes,
  InsufficientClass,
  ConfigIncomplete,
  Io,
};

std::string_view error_kind_name(ErrorKind kind);

/// Every failure raised by the library carries one of the ErrorKind tags so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace audep
