#include "critic/types.hpp"

#include <cmath>

namespace critic {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kMissingReference: return "MissingReference";
    case ErrorCode::kUnknownPlaceholder: return "UnknownPlaceholder";
    case ErrorCode::kTaskMismatch: return "TaskMismatch";
    case ErrorCode::kEmptyPool: return "EmptyPool";
    case ErrorCode::kDuplicateTemplate: return "DuplicateTemplate";
    case ErrorCode::kNoScoreFound: return "NoScoreFound";
    case ErrorCode::kScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorCode::kMalformedDualScore: return "MalformedDualScore";
    case ErrorCode::kAmbiguousVerdict: return "AmbiguousVerdict";
    case ErrorCode::kTransportError: return "TransportError";
    case ErrorCode::kAuthError: return "AuthError";
    case ErrorCode::kScriptMiss: return "ScriptMiss";
    case ErrorCode::kPartialGeneration: return "PartialGeneration";
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kIncompleteMatrix: return "IncompleteMatrix";
    case ErrorCode::kHaltBetweenRounds: return "HaltBetweenRounds";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kInsufficientTies: return "InsufficientTies";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

ImageRef::Kind ImageRef::kind() const noexcept {
  if (value.starts_with("data:")) return Kind::kInlineBase64;
  if (value.starts_with("http://") || value.starts_with("https://")) return Kind::kUrl;
  return Kind::kFile;
}

void validate(const ScoreScale& scale) {
  if (!std::isfinite(scale.min) || !std::isfinite(scale.max) || !(scale.min < scale.max)) {
    fail(ErrorCode::kInvalidArgument, "score scale requires finite min < max");
  }
}

void validate(const EvalTask& task) {
  if (task.task_id.empty()) fail(ErrorCode::kInvalidArgument, "task_id must be non-empty");
  if (task.question.empty()) {
    fail(ErrorCode::kInvalidArgument, "task '" + task.task_id + "' has an empty question");
  }
}

void validate(const CandidateResponse& response) {
  if (response.text.empty()) {
    fail(ErrorCode::kInvalidArgument, "response '" + response.response_id + "' has empty text");
  }
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::kA: return "A";
    case Verdict::kB: return "B";
    case Verdict::kTie: return "Tie";
  }
  return "Tie";
}

Verdict verdict_from_string(std::string_view s) {
  if (s == "A" || s == "a") return Verdict::kA;
  if (s == "B" || s == "b") return Verdict::kB;
  if (s == "Tie" || s == "tie" || s == "TIE") return Verdict::kTie;
  fail(ErrorCode::kInvalidArgument, "unknown verdict '" + std::string(s) + "'");
}

}  // namespace critic
