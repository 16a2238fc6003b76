#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace reframe {

enum class ErrorCode {
  kInvalidSeed,
  kUnboundPlaceholder,
  kWrongRole,
  kWrongStage,
  kSessionClosed,
  kMalformedTranscript,
  kInvalidRequest,
  kTimeout,
  kBadStatus,
  kExhaustedScript,
  kMissingApiKey,
  kUnparseableValidatorReply,
  kMissingField,
  kDuplicateId,
  kCountOverflow,
  kInvalidConfig,
  kOutOfRange,
  kGapCell,
  kEmptyGroup,
  kMismatchedDialogueSets,
  kUnparseableScores,
  kIncompleteResponse,
  kPhaseMismatch,
  kClientMismatch,
  kInsufficientGroups,
  kCorruptEntry,
  kIo,
};

std::string_view code_name(ErrorCode code);

// Every failure surfaced by the library is an Error carrying a stable code.
// what() is "<CodeName>: <message>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return code_name(code_); }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace reframe
