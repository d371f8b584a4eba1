#include "robochain/errors.hpp"

namespace robochain {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::PermissionDenied: return "PermissionDenied";
    case ErrorCode::InvalidSignature: return "InvalidSignature";
    case ErrorCode::AuthenticationFailure: return "AuthenticationFailure";
    case ErrorCode::TimestampRegression: return "TimestampRegression";
    case ErrorCode::CorruptData: return "CorruptData";
    case ErrorCode::NotVerified: return "NotVerified";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnknownAlgorithm: return "UnknownAlgorithm";
    case ErrorCode::DisallowedField: return "DisallowedField";
    case ErrorCode::SuppressedInput: return "SuppressedInput";
    case ErrorCode::ZeroBaseline: return "ZeroBaseline";
    case ErrorCode::MismatchedIds: return "MismatchedIds";
    case ErrorCode::UnknownBlockRef: return "UnknownBlockRef";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteParams: return "NonFiniteParams";
    case ErrorCode::UnknownVersion: return "UnknownVersion";
    case ErrorCode::NoConsensualVersion: return "NoConsensualVersion";
    case ErrorCode::StaleBase: return "StaleBase";
    case ErrorCode::RejectedContent: return "RejectedContent";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::EmptyUpdates: return "EmptyUpdates";
    case ErrorCode::RoundInProgress: return "RoundInProgress";
    case ErrorCode::OrphanCandidate: return "OrphanCandidate";
    case ErrorCode::RoundClosed: return "RoundClosed";
    case ErrorCode::DuplicateFeedback: return "DuplicateFeedback";
    case ErrorCode::LateFeedback: return "LateFeedback";
    case ErrorCode::RoundNotOpen: return "RoundNotOpen";
    case ErrorCode::NotAccepted: return "NotAccepted";
    case ErrorCode::RoundNotResolved: return "RoundNotResolved";
    case ErrorCode::WrongSigner: return "WrongSigner";
    case ErrorCode::WrongModel: return "WrongModel";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingArtifacts: return "MissingArtifacts";
    case ErrorCode::KeyRequired: return "KeyRequired";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

}  // namespace robochain
