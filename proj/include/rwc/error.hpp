#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rwc {

enum class ErrorCode {
  // snapshot_format
  NonFiniteValue,
  MalformedHeader,
  UnsupportedDtype,
  TruncatedFile,
  IoFailure,
  MalformedManifest,
  UnsupportedVersion,
  InvalidField,
  MissingSnapshot,
  // rwc_engine
  ShapeMismatch,
  DegenerateBaseline,
  InsufficientSnapshots,
  ParameterMissing,
  ShapeDrift,
  EmptySelection,
  // layer_grouping
  RangeOutOfBounds,
  LengthMismatch,
  MissingParamCount,
  MalformedRules,
  // seed_aggregation
  LabelMismatch,
  ModeMismatch,
  EmptyInput,
  EpochCountMismatch,
  ArchitectureMismatch,
  DuplicateRunId,
  // trend_analysis
  EmptyWindow,
  TooFewGroups,
  // desk_trainer
  LabelOutOfRange,
  DivergenceDetected,
  InvalidConfig,
  // reporting
  EmptyCurves,
  NonPositiveOnLogScale,
  MalformedCsv,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::InvalidField: return "InvalidField";
    case ErrorCode::MissingSnapshot: return "MissingSnapshot";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::InsufficientSnapshots: return "InsufficientSnapshots";
    case ErrorCode::ParameterMissing: return "ParameterMissing";
    case ErrorCode::ShapeDrift: return "ShapeDrift";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::RangeOutOfBounds: return "RangeOutOfBounds";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingParamCount: return "MissingParamCount";
    case ErrorCode::MalformedRules: return "MalformedRules";
    case ErrorCode::LabelMismatch: return "LabelMismatch";
    case ErrorCode::ModeMismatch: return "ModeMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EpochCountMismatch: return "EpochCountMismatch";
    case ErrorCode::ArchitectureMismatch: return "ArchitectureMismatch";
    case ErrorCode::DuplicateRunId: return "DuplicateRunId";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::TooFewGroups: return "TooFewGroups";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyCurves: return "EmptyCurves";
    case ErrorCode::NonPositiveOnLogScale: return "NonPositiveOnLogScale";
    case ErrorCode::MalformedCsv: return "MalformedCsv";
  }
  return "Unknown";
}

/// Every user-correctable failure in the library is an rwc::Error. The code
/// identifies the failure class; what() carries the human-readable context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// what() without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace rwc
