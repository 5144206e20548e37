#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "critic/error.hpp"

namespace critic {

// Image reference as handed to the judge: local path, http(s) URL, or a
// "data:<mime>;base64,..." inline payload.
struct ImageRef {
  enum class Kind { kFile, kUrl, kInlineBase64 };

  std::string value;

  Kind kind() const noexcept;
  bool empty() const noexcept { return value.empty(); }
  bool operator==(const ImageRef&) const = default;
};

struct EvalTask {
  std::string task_id;
  std::string question;
  ImageRef image;
  std::optional<std::string> reference_answer;
  // Scenario tag used to route tasks to pointwise presets ("" = untagged).
  std::string source;

  bool operator==(const EvalTask&) const = default;
};

struct CandidateResponse {
  std::string response_id;
  std::string task_id;
  std::string producer_model;
  std::string text;

  bool operator==(const CandidateResponse&) const = default;
};

struct ScoreScale {
  double min = 0.0;
  double max = 100.0;

  bool contains(double v) const noexcept { return v >= min && v <= max; }
  bool operator==(const ScoreScale&) const = default;
};

// Throws kInvalidArgument unless min < max and both are finite.
void validate(const ScoreScale& scale);
void validate(const EvalTask& task);
void validate(const CandidateResponse& response);

enum class Verdict { kA, kB, kTie };

std::string_view to_string(Verdict v) noexcept;
Verdict verdict_from_string(std::string_view s);

}  // namespace critic
