#include "fleet/error.h"

#include <array>
#include <utility>

namespace fleet {
namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 42> kNames{{
    {ErrorCode::MalformedDocument, "MalformedDocument"},
    {ErrorCode::InvariantViolation, "InvariantViolation"},
    {ErrorCode::IllegalTransition, "IllegalTransition"},
    {ErrorCode::ValidationError, "ValidationError"},
    {ErrorCode::NoDataHolders, "NoDataHolders"},
    {ErrorCode::UnassignableTask, "UnassignableTask"},
    {ErrorCode::DuplicateArtifact, "DuplicateArtifact"},
    {ErrorCode::UnknownTask, "UnknownTask"},
    {ErrorCode::UnknownNode, "UnknownNode"},
    {ErrorCode::UnknownSender, "UnknownSender"},
    {ErrorCode::SignatureInvalid, "SignatureInvalid"},
    {ErrorCode::StaleTimestamp, "StaleTimestamp"},
    {ErrorCode::ReplayDetected, "ReplayDetected"},
    {ErrorCode::DecryptFailed, "DecryptFailed"},
    {ErrorCode::ConfigInvalid, "ConfigInvalid"},
    {ErrorCode::DataSourceMissing, "DataSourceMissing"},
    {ErrorCode::JoinRefused, "JoinRefused"},
    {ErrorCode::DuplicateName, "DuplicateName"},
    {ErrorCode::MalformedJoin, "MalformedJoin"},
    {ErrorCode::UnknownProject, "UnknownProject"},
    {ErrorCode::NotYourTask, "NotYourTask"},
    {ErrorCode::UnknownResource, "UnknownResource"},
    {ErrorCode::DuplicateResource, "DuplicateResource"},
    {ErrorCode::Forbidden, "Forbidden"},
    {ErrorCode::UnknownInstruction, "UnknownInstruction"},
    {ErrorCode::SchemaMismatch, "SchemaMismatch"},
    {ErrorCode::NoLocalData, "NoLocalData"},
    {ErrorCode::LabelMissing, "LabelMissing"},
    {ErrorCode::EmptyTable, "EmptyTable"},
    {ErrorCode::EmptyTrainSet, "EmptyTrainSet"},
    {ErrorCode::NoFeatures, "NoFeatures"},
    {ErrorCode::IncompatibleSchemas, "IncompatibleSchemas"},
    {ErrorCode::MissingFeature, "MissingFeature"},
    {ErrorCode::MissingModel, "MissingModel"},
    {ErrorCode::Unreachable, "Unreachable"},
    {ErrorCode::HandshakeFailed, "HandshakeFailed"},
    {ErrorCode::UnknownArtifact, "UnknownArtifact"},
    {ErrorCode::NotReady, "NotReady"},
    {ErrorCode::NotConnected, "NotConnected"},
    {ErrorCode::SpawnFailed, "SpawnFailed"},
    {ErrorCode::Timeout, "Timeout"},
    {ErrorCode::Internal, "Internal"},
}};

}  // namespace

std::string_view error_code_name(ErrorCode code) {
  for (const auto& [c, name] : kNames) {
    if (c == code) return name;
  }
  return "Internal";
}

ErrorCode error_code_from_name(std::string_view name) {
  for (const auto& [c, n] : kNames) {
    if (n == name) return c;
  }
  return ErrorCode::Internal;
}

}  // namespace fleet
