#include "critic/verdict.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <optional>

namespace critic::verdict {

namespace {

bool is_word_char(char c) noexcept {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(s.substr(start));
      break;
    }
    lines.push_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

double to_double(std::string_view s) {
  // from_chars rejects a leading '+'.
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{}) fail(ErrorCode::kInternal, "number scan mismatch");
  return v;
}

// Scans a decimal number starting exactly at `pos`; returns its end.
std::optional<std::size_t> scan_number(std::string_view text, std::size_t pos) {
  std::size_t i = pos;
  if (i < text.size() && (text[i] == '-' || text[i] == '+')) ++i;
  const auto digits_begin = i;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
  if (i == digits_begin) return std::nullopt;
  if (i + 1 < text.size() && text[i] == '.' && std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
    ++i;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
  }
  return i;
}

std::string remove_span_lines(std::string_view raw, std::size_t line_begin, std::size_t line_end) {
  std::string out(raw.substr(0, line_begin));
  out.append(raw.substr(line_end));
  return std::string(trim(out));
}

bool contains_phrase(std::string_view haystack, std::string_view phrase) {
  if (phrase.empty()) return false;
  std::size_t pos = 0;
  while ((pos = haystack.find(phrase, pos)) != std::string_view::npos) {
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const auto end = pos + phrase.size();
    const bool right_ok = end >= haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

std::string normalize_for_match(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool in_space = false;
  for (unsigned char c : raw) {
    if (std::isspace(c)) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

void require_non_empty(std::string_view raw) {
  if (trim(raw).empty()) fail(ErrorCode::kInvalidArgument, "judge reply is empty");
}

}  // namespace

std::vector<NumberToken> standalone_numbers(std::string_view text) {
  std::vector<NumberToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    const bool digit = std::isdigit(static_cast<unsigned char>(c)) != 0;
    const bool sign = (c == '-' || c == '+') && i + 1 < text.size() &&
                      std::isdigit(static_cast<unsigned char>(text[i + 1]));
    if (!digit && !sign) {
      ++i;
      continue;
    }
    const char prev = i > 0 ? text[i - 1] : ' ';
    // Glued to a word ("GPT-4", "v2"), a decimal ("1.5" tail), or a
    // denominator ("8/10") is not standalone.
    const bool left_ok = !is_word_char(prev) && prev != '.' && prev != '/' &&
                         !(digit && (prev == '-' || prev == '+'));
    const auto end = scan_number(text, i);
    if (!end) {
      ++i;
      continue;
    }
    const bool right_ok = *end >= text.size() || !is_word_char(text[*end]);
    if (left_ok && right_ok) {
      out.push_back({to_double(text.substr(i, *end - i)), i, *end});
    }
    i = *end;
  }
  return out;
}

PointwiseJudgment parse_pointwise(std::string_view raw, const ScoreScale& scale) {
  validate(scale);
  require_non_empty(raw);
  PointwiseJudgment out;
  out.scale = scale;
  out.raw = std::string(raw);

  static constexpr std::string_view kMarker = "final score:";
  const auto folded = lower(raw);

  std::optional<double> score;
  std::size_t pos = folded.size();
  while (!score && pos > 0) {
    const auto found = folded.rfind(kMarker, pos - 1);
    if (found == std::string::npos) break;
    std::size_t i = found + kMarker.size();
    while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t' || raw[i] == '*')) ++i;
    if (const auto end = scan_number(raw, i)) {
      score = to_double(raw.substr(i, *end - i));
      std::size_t begin = found;
      while (begin > 0 && raw[begin - 1] == '*') --begin;
      auto line_end = raw.find('\n', *end);
      if (line_end == std::string_view::npos) line_end = raw.size();
      out.reason = remove_span_lines(raw, begin, line_end);
    }
    pos = found;
  }

  if (!score) {
    const auto numbers = standalone_numbers(raw);
    if (numbers.empty()) fail(ErrorCode::kNoScoreFound, "no score found in judge reply");
    const auto& last = numbers.back();
    score = last.value;
    auto line_begin = raw.rfind('\n', last.begin);
    line_begin = line_begin == std::string_view::npos ? 0 : line_begin + 1;
    auto line_end = raw.find('\n', last.end);
    if (line_end == std::string_view::npos) line_end = raw.size();
    std::string rest(raw.substr(line_begin, last.begin - line_begin));
    rest.append(raw.substr(last.end, line_end - last.end));
    const bool has_words = std::any_of(rest.begin(), rest.end(), [](unsigned char ch) {
      return std::isalpha(ch) != 0;
    });
    out.reason = has_words ? std::string(trim(raw)) : remove_span_lines(raw, line_begin, line_end);
  }

  if (!scale.contains(*score)) {
    fail(ErrorCode::kScoreOutOfRange, "score " + std::to_string(*score) + " outside [" +
                                          std::to_string(scale.min) + ", " +
                                          std::to_string(scale.max) + "]");
  }
  out.score = *score;
  return out;
}

DualScoreJudgment parse_dual_score(std::string_view raw, const ScoreScale& scale) {
  validate(scale);
  require_non_empty(raw);
  const auto lines = split_lines(raw);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const auto line = trim(lines[li]);
    const auto end1 = scan_number(line, 0);
    if (!end1) continue;
    std::size_t j = *end1;
    if (j >= line.size() || (line[j] != ' ' && line[j] != '\t')) continue;
    while (j < line.size() && (line[j] == ' ' || line[j] == '\t')) ++j;
    const auto end2 = scan_number(line, j);
    if (!end2 || *end2 != line.size()) continue;

    DualScoreJudgment out;
    out.raw = std::string(raw);
    out.reference_score = to_double(line.substr(0, *end1));
    out.candidate_score = to_double(line.substr(j, *end2 - j));
    if (!scale.contains(out.reference_score) || !scale.contains(out.candidate_score)) {
      fail(ErrorCode::kScoreOutOfRange, "dual score outside the template scale");
    }
    std::string reason;
    for (std::size_t k = 0; k < lines.size(); ++k) {
      if (k == li) continue;
      if (!reason.empty()) reason.push_back('\n');
      reason.append(lines[k]);
    }
    out.reason = std::string(trim(reason));
    return out;
  }
  fail(ErrorCode::kMalformedDualScore, "no line with exactly two scores in judge reply");
}

const PairwiseLexicon& PairwiseLexicon::defaults() {
  static const PairwiseLexicon lexicon{
      {"response a is better", "the first response is better", "response 1 is better",
       "assistant a is better"},
      {"response b is better", "the second response is better", "response 2 is better",
       "assistant b is better"},
      {"tie", "equally good", "both responses are comparable", "equally helpful",
       "neither response is better"},
  };
  return lexicon;
}

PairwiseLexicon PairwiseLexicon::from_json(const nlohmann::json& doc) {
  PairwiseLexicon out = defaults();
  auto extend = [&](const char* key, std::vector<std::string>& into) {
    if (!doc.contains(key)) return;
    for (const auto& p : doc.at(key)) into.push_back(normalize_for_match(p.get<std::string>()));
  };
  try {
    extend("a", out.a_phrases);
    extend("b", out.b_phrases);
    extend("tie", out.tie_phrases);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed lexicon: ") + ex.what());
  }
  return out;
}

PairwiseVerdict parse_pairwise(std::string_view raw, const PairwiseLexicon& lexicon) {
  require_non_empty(raw);
  PairwiseVerdict out;
  out.raw = std::string(raw);
  out.reason = std::string(trim(raw));
  const auto text = normalize_for_match(raw);

  auto any = [&](const std::vector<std::string>& phrases) {
    return std::any_of(phrases.begin(), phrases.end(),
                       [&](const std::string& p) { return contains_phrase(text, p); });
  };

  // Rule 1: explicit preference phrases.
  const bool a = any(lexicon.a_phrases);
  const bool b = any(lexicon.b_phrases);
  if (a && b) fail(ErrorCode::kAmbiguousVerdict, "reply states both A and B are better");
  if (a || b) {
    out.verdict = a ? Verdict::kA : Verdict::kB;
    return out;
  }

  // Rule 2: tie lexicon.
  if (any(lexicon.tie_phrases)) {
    out.verdict = Verdict::kTie;
    return out;
  }

  // Rule 3: leading [[A]] / [[B]] / [[Tie]] token line.
  const auto lines = split_lines(raw);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty()) continue;
    const auto folded = lower(line);
    std::optional<Verdict> token;
    std::size_t token_len = 0;
    if (folded.starts_with("[[a]]")) {
      token = Verdict::kA;
      token_len = 5;
    } else if (folded.starts_with("[[b]]")) {
      token = Verdict::kB;
      token_len = 5;
    } else if (folded.starts_with("[[tie]]")) {
      token = Verdict::kTie;
      token_len = 7;
    }
    if (!token) break;
    out.verdict = *token;
    std::string reason(line.substr(token_len));
    for (std::size_t k = i + 1; k < lines.size(); ++k) {
      reason.push_back('\n');
      reason.append(lines[k]);
    }
    out.reason = std::string(trim(reason));
    return out;
  }

  fail(ErrorCode::kAmbiguousVerdict, "no verdict found in judge reply");
}

}  // namespace critic::verdict
