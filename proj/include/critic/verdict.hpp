#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "critic/types.hpp"

namespace critic::verdict {

struct PointwiseJudgment {
  double score = 0.0;
  ScoreScale scale;
  std::string reason;
  std::string raw;
};

struct DualScoreJudgment {
  double reference_score = 0.0;
  double candidate_score = 0.0;
  std::string reason;
  std::string raw;
};

struct PairwiseVerdict {
  Verdict verdict = Verdict::kTie;
  std::string reason;
  std::string raw;
};

// Phrase lists matched case-insensitively against whitespace-normalized text.
// Tie phrases match on word boundaries so "tie" does not fire inside "entire".
struct PairwiseLexicon {
  std::vector<std::string> a_phrases;
  std::vector<std::string> b_phrases;
  std::vector<std::string> tie_phrases;

  static const PairwiseLexicon& defaults();
  // Extends the defaults with the arrays "a", "b", "tie" from a JSON object.
  static PairwiseLexicon from_json(const nlohmann::json& doc);
};

// Marker rule: last "Final Score:" followed by a number. Fallback: the last
// standalone number in the text.
PointwiseJudgment parse_pointwise(std::string_view raw, const ScoreScale& scale);

// First line consisting of exactly two whitespace-separated numbers.
DualScoreJudgment parse_dual_score(std::string_view raw, const ScoreScale& scale);

PairwiseVerdict parse_pairwise(std::string_view raw,
                               const PairwiseLexicon& lexicon = PairwiseLexicon::defaults());

// Decimal number scan shared by the parsers: optional sign, digits, optional
// ".digits". No thousands separators.
struct NumberToken {
  double value = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

std::vector<NumberToken> standalone_numbers(std::string_view text);

}  // namespace critic::verdict
