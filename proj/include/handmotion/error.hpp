#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hm {

/// Failure categories raised across the library. The CLI maps these onto
/// exit codes and the machine-readable error record on stderr.
enum class ErrorCode {
  DegenerateRotation,
  NotARotation,
  LayoutMismatch,
  IndexOutOfRange,
  BadMagic,
  VersionUnsupported,
  TruncatedPayload,
  IoError,
  FrameCountMismatch,
  NonFiniteObjective,
  UnknownAnchor,
  SchemaViolation,
  MissingLexiconEntry,
  EndpointError,
  ParseError,
  FixtureMiss,
  UnknownWord,
  ZeroVector,
  FeatureWidthMismatch,
  EmptyText,
  EmptyDataset,
  CovarianceSingularBeyondTolerance,
  InsufficientSamples,
  BadScheduleParams,
  LengthExceedsMax,
  ChecksumMismatch,
  BadFrameIndex,
  MissingCheckpoint,
  ConfigError,
  StageFailure,
};

std::string_view to_string(ErrorCode code);

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

}  // namespace hm
