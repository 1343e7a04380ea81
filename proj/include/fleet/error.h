#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fleet {

enum class ErrorCode {
  // model
  MalformedDocument,
  InvariantViolation,
  IllegalTransition,
  // planner
  ValidationError,
  NoDataHolders,
  UnassignableTask,
  // scheduler
  DuplicateArtifact,
  UnknownTask,
  UnknownNode,
  // identity
  UnknownSender,
  SignatureInvalid,
  StaleTimestamp,
  ReplayDetected,
  DecryptFailed,
  // node
  ConfigInvalid,
  DataSourceMissing,
  JoinRefused,
  DuplicateName,
  MalformedJoin,
  UnknownProject,
  NotYourTask,
  UnknownResource,
  DuplicateResource,
  Forbidden,
  // executor
  UnknownInstruction,
  SchemaMismatch,
  NoLocalData,
  LabelMissing,
  EmptyTable,
  EmptyTrainSet,
  NoFeatures,
  IncompatibleSchemas,
  MissingFeature,
  MissingModel,
  // workbench
  Unreachable,
  HandshakeFailed,
  UnknownArtifact,
  NotReady,
  NotConnected,
  // harness
  SpawnFailed,
  Timeout,
  Internal,
};

std::string_view error_code_name(ErrorCode code);

// Inverse of error_code_name; unknown names map to Internal.
ErrorCode error_code_from_name(std::string_view name);

/// The single exception type thrown across the project. `code` is stable
/// and travels over the wire; `what()` carries a human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fleet
