#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace critic {

// Numeric values are part of the C ABI (see critic.h); append only.
enum class ErrorCode : int {
  kOk = 0,
  kInvalidArgument = 1,
  kMissingReference = 2,
  kUnknownPlaceholder = 3,
  kTaskMismatch = 4,
  kEmptyPool = 5,
  kDuplicateTemplate = 6,
  kNoScoreFound = 7,
  kScoreOutOfRange = 8,
  kMalformedDualScore = 9,
  kAmbiguousVerdict = 10,
  kTransportError = 11,
  kAuthError = 12,
  kScriptMiss = 13,
  kPartialGeneration = 14,
  kDegenerateInput = 15,
  kIncompleteMatrix = 16,
  kHaltBetweenRounds = 17,
  kDimensionMismatch = 18,
  kInsufficientTies = 19,
  kIoError = 20,
  kParseError = 21,
  kInternal = 22,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // Transport failures are the only class the dispatch layer retries.
  bool retryable() const noexcept { return code_ == ErrorCode::kTransportError; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace critic
