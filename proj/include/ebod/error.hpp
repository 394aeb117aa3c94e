#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ebod {

enum class ErrorCode {
  // geometry
  DegeneratePoint,
  DegenerateHomography,
  EmptyAfterClip,
  InvalidArgument,
  // candidate generation
  EmptyFeatureMap,
  ZeroQueryFeature,
  DimensionMismatch,
  // verification
  DegenerateConfiguration,
  TooFewMatches,
  NoValidModel,
  // store
  DuplicateId,
  CropOutOfBounds,
  CropTooSmall,
  IoFailure,
  ManifestMissing,
  ManifestCorrupt,
  MissingImage,
  UnknownId,
  // backends / pipeline
  BackendUnavailable,
  SchemaViolation,
  UnknownTextPrompt,
  ImageDecodeError,
};

inline constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegeneratePoint: return "DegeneratePoint";
    case ErrorCode::DegenerateHomography: return "DegenerateHomography";
    case ErrorCode::EmptyAfterClip: return "EmptyAfterClip";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyFeatureMap: return "EmptyFeatureMap";
    case ErrorCode::ZeroQueryFeature: return "ZeroQueryFeature";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::TooFewMatches: return "TooFewMatches";
    case ErrorCode::NoValidModel: return "NoValidModel";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::CropOutOfBounds: return "CropOutOfBounds";
    case ErrorCode::CropTooSmall: return "CropTooSmall";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ManifestMissing: return "ManifestMissing";
    case ErrorCode::ManifestCorrupt: return "ManifestCorrupt";
    case ErrorCode::MissingImage: return "MissingImage";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::UnknownTextPrompt: return "UnknownTextPrompt";
    case ErrorCode::ImageDecodeError: return "ImageDecodeError";
  }
  return "Unknown";
}

/// Exception carrying a typed error class. `what()` is "<Code>: <message>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace ebod
