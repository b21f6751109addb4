#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stemfactor {

enum class ErrorCode {
  MalformedHeader,
  ShapeMismatch,
  NegativeIntensity,
  NonFinite,
  IoFailure,
  InvalidSpec,
  InvalidArgument,
  EmptyInput,
  EmptyMatrix,
  TooFewPixels,
  TooSmall,
  KneeNotFound,
  TooFewPoints,
  EmptyCandidates,
  NeedTwoClusters,
  BadThresholds,
  LengthMismatch,
  MissingUpstream,
  ConfigError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Coarse failure class used for process exit codes.
enum class ErrorCategory { Config = 2, Data = 3, Numerical = 4, Io = 5 };

ErrorCategory category_of(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace stemfactor
