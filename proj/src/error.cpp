#include "handmotion/error.hpp"

namespace hm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateRotation: return "DegenerateRotation";
    case ErrorCode::NotARotation: return "NotARotation";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FrameCountMismatch: return "FrameCountMismatch";
    case ErrorCode::NonFiniteObjective: return "NonFiniteObjective";
    case ErrorCode::UnknownAnchor: return "UnknownAnchor";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::MissingLexiconEntry: return "MissingLexiconEntry";
    case ErrorCode::EndpointError: return "EndpointError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::FixtureMiss: return "FixtureMiss";
    case ErrorCode::UnknownWord: return "UnknownWord";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::FeatureWidthMismatch: return "FeatureWidthMismatch";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::CovarianceSingularBeyondTolerance: return "CovarianceSingularBeyondTolerance";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::BadScheduleParams: return "BadScheduleParams";
    case ErrorCode::LengthExceedsMax: return "LengthExceedsMax";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::BadFrameIndex: return "BadFrameIndex";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::StageFailure: return "StageFailure";
  }
  return "Unknown";
}

}  // namespace hm
