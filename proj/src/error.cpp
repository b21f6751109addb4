#include "stemfactor/error.hpp"

namespace stemfactor {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NegativeIntensity: return "NegativeIntensity";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::TooFewPixels: return "TooFewPixels";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::KneeNotFound: return "KneeNotFound";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::NeedTwoClusters: return "NeedTwoClusters";
    case ErrorCode::BadThresholds: return "BadThresholds";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingUpstream: return "MissingUpstream";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidSpec:
    case ErrorCode::InvalidArgument:
    case ErrorCode::BadThresholds:
    case ErrorCode::ConfigError:
      return ErrorCategory::Config;
    case ErrorCode::NonFinite:
    case ErrorCode::KneeNotFound:
    case ErrorCode::EmptyCandidates:
      return ErrorCategory::Numerical;
    case ErrorCode::IoFailure:
      return ErrorCategory::Io;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace stemfactor
