#include "reframe/error.hpp"

namespace reframe {

std::string_view code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidSeed: return "InvalidSeed";
    case ErrorCode::kUnboundPlaceholder: return "UnboundPlaceholder";
    case ErrorCode::kWrongRole: return "WrongRole";
    case ErrorCode::kWrongStage: return "WrongStage";
    case ErrorCode::kSessionClosed: return "SessionClosed";
    case ErrorCode::kMalformedTranscript: return "MalformedTranscript";
    case ErrorCode::kInvalidRequest: return "InvalidRequest";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kBadStatus: return "BadStatus";
    case ErrorCode::kExhaustedScript: return "ExhaustedScript";
    case ErrorCode::kMissingApiKey: return "MissingApiKey";
    case ErrorCode::kUnparseableValidatorReply: return "UnparseableValidatorReply";
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kCountOverflow: return "CountOverflow";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kGapCell: return "GapCell";
    case ErrorCode::kEmptyGroup: return "EmptyGroup";
    case ErrorCode::kMismatchedDialogueSets: return "MismatchedDialogueSets";
    case ErrorCode::kUnparseableScores: return "UnparseableScores";
    case ErrorCode::kIncompleteResponse: return "IncompleteResponse";
    case ErrorCode::kPhaseMismatch: return "PhaseMismatch";
    case ErrorCode::kClientMismatch: return "ClientMismatch";
    case ErrorCode::kInsufficientGroups: return "InsufficientGroups";
    case ErrorCode::kCorruptEntry: return "CorruptEntry";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(code_name(code)) + ": " + message),
      code_(code),
      message_(message) {}

}  // namespace reframe
