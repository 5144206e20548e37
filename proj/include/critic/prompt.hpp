#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "critic/types.hpp"

namespace critic::prompt {

enum class Setting { kPointwise, kPairwise };
enum class OutputFormat { kScoreLast, kDualScoreFirstLine, kVerdictProse };

std::string_view to_string(Setting s) noexcept;
std::string_view to_string(OutputFormat f) noexcept;
Setting setting_from_string(std::string_view s);
OutputFormat output_format_from_string(std::string_view s);

// Judge-input template. Placeholders are brace-delimited names drawn from
// {question}, {response}, {response_a}, {response_b}, {reference}; "{{" and
// "}}" produce literal braces.
struct PromptTemplate {
  std::string template_id;
  Setting setting = Setting::kPairwise;
  std::string body;
  std::optional<ScoreScale> score_scale;
  OutputFormat output_format = OutputFormat::kVerdictProse;
  // Pointwise presets only: scenario tag a task must carry to be routed here.
  // Empty matches every task.
  std::string scenario;

  bool operator==(const PromptTemplate&) const = default;
};

// Ordered token stream of a template body.
struct Segment {
  bool is_placeholder = false;
  std::string text;  // literal text, or placeholder name without braces
};

// Splits a body into literal and placeholder segments. Placeholder names must
// belong to `allowed`; an unbalanced brace or an unknown name throws
// kUnknownPlaceholder.
std::vector<Segment> tokenize(std::string_view body, std::span<const std::string_view> allowed);

// Generic single-pass substitution: values are inserted verbatim and never
// re-scanned for placeholders.
std::string substitute(std::string_view body, std::span<const std::string_view> allowed,
                       const std::map<std::string, std::string, std::less<>>& values);

bool references_placeholder(const PromptTemplate& t, std::string_view name);

// Load-time validation of all template invariants.
void validate(const PromptTemplate& t);

std::string render_pointwise(const EvalTask& task, const CandidateResponse& response,
                             const PromptTemplate& t);

std::string render_pairwise(const EvalTask& task, const CandidateResponse& a,
                            const CandidateResponse& b, const PromptTemplate& t);

// A validated, non-empty list of templates with unique ids.
class TemplatePool {
 public:
  TemplatePool() = default;
  explicit TemplatePool(std::vector<PromptTemplate> templates);

  static TemplatePool from_json(const nlohmann::json& doc);
  static TemplatePool load(const std::filesystem::path& path);

  nlohmann::json to_json() const;

  const std::vector<PromptTemplate>& templates() const noexcept { return templates_; }
  std::size_t size() const noexcept { return templates_.size(); }
  bool empty() const noexcept { return templates_.empty(); }

  const PromptTemplate& at(std::string_view template_id) const;
  const PromptTemplate* find(std::string_view template_id) const noexcept;

  // Subset sharing one setting, in original order.
  TemplatePool filter(Setting setting) const;

 private:
  std::vector<PromptTemplate> templates_;
};

// Deterministic pick for (seed, index); approaches uniform over the pool.
const PromptTemplate& assign_template(std::span<const PromptTemplate> pool, std::uint64_t seed,
                                      std::uint64_t index);
const PromptTemplate& assign_template(const TemplatePool& pool, std::uint64_t seed,
                                      std::uint64_t index);

// Shipped defaults. The pairwise pool holds 30 templates: the two published
// criteria/general templates, the published caption-comparison prompt, and
// 27 authored variants.
TemplatePool default_pairwise_pool();

// Named pointwise presets with declared output formats:
//   image_dc_0_100       0-100 caption rating, "Final Score:" last
//   llava_wilder_dual    1-10 reference-anchored dual score on the first line
//   visual_chat_1_10     generic 1-10 rating, "Final Score:" last
TemplatePool pointwise_presets();

}  // namespace critic::prompt
