#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "critic/backend.hpp"
#include "critic/prompt.hpp"
#include "critic/types.hpp"

namespace critic::curation {

struct ScoredCandidate {
  CandidateResponse response;
  std::vector<double> dimension_scores;
};

// One row of the scored-pairs input file.
struct ScoredPair {
  EvalTask task;
  ScoredCandidate a;
  ScoredCandidate b;
  std::optional<std::string> label;  // "first" | "second" | "tie" for pre-labeled pairs
  std::string provenance;            // source tag, e.g. "vlfeedback", "rlhf-v"
};

enum class Preference { kFirst, kSecond, kTie };

std::string_view to_string(Preference p) noexcept;
Preference preference_from_string(std::string_view s);

struct LabeledPair {
  EvalTask task;
  CandidateResponse first;
  CandidateResponse second;
  Preference preference = Preference::kTie;
  std::string provenance;
};

struct PointwiseRecord {
  std::string image_ref;
  std::string question;
  std::string response_text;
  std::optional<std::string> reference_text;
  std::string criteria_prompt;
  double score = 0.0;
  std::string reason;
  nlohmann::json metadata = nlohmann::json::object();

  bool operator==(const PointwiseRecord&) const = default;
};

struct PairwiseRecord {
  std::string image_ref;
  std::string question;
  std::string response_1;
  std::string response_2;
  std::string criteria_prompt;
  Preference preference = Preference::kTie;
  std::string reason;
  nlohmann::json metadata = nlohmann::json::object();

  bool operator==(const PairwiseRecord&) const = default;
};

// Serialized field order follows the training-sample layout.
nlohmann::ordered_json to_json(const PointwiseRecord& r);
nlohmann::ordered_json to_json(const PairwiseRecord& r);
PointwiseRecord pointwise_record_from_json(const nlohmann::json& doc);
PairwiseRecord pairwise_record_from_json(const nlohmann::json& doc);

std::vector<PointwiseRecord> load_pointwise_records(const std::filesystem::path& path);
std::vector<PairwiseRecord> load_pairwise_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, std::span<const PointwiseRecord> records);
void write_records(const std::filesystem::path& path, std::span<const PairwiseRecord> records);

ScoredPair scored_pair_from_json(const nlohmann::json& doc);
std::vector<ScoredPair> load_scored_pairs(const std::filesystem::path& path);

struct BuildStats {
  std::size_t emitted = 0;
  std::size_t skipped_routing = 0;  // preset needed a reference the task lacks
  std::size_t parse_failures = 0;
  std::size_t backend_failures = 0;
};

struct PointwiseBuild {
  std::vector<PointwiseRecord> records;
  BuildStats stats;
};

// One record per routed (task, response, preset) triple. `responses` are
// matched to tasks by task_id. Failures drop the record and are counted.
PointwiseBuild build_pointwise(std::span<const EvalTask> tasks,
                               std::span<const CandidateResponse> responses,
                               const prompt::TemplatePool& presets, backend::Client& judge,
                               double judge_temperature = 0.0);

// Pairs whose mean per-dimension score gap exceeds `threshold` (strictly),
// labeled with the higher-mean side as the winner.
std::vector<LabeledPair> filter_by_score_gap(std::span<const ScoredPair> pairs, double threshold = 0.6);

// Tolerance used when comparing the gap to the threshold, so that decimal
// inputs landing exactly on the threshold are not kept by rounding noise.
inline constexpr double kGapTolerance = 1e-9;

bool is_tie_eligible(const ScoredPair& pair);

// Seeded uniform sample without replacement from all-dimension-identical pairs.
std::vector<LabeledPair> sample_ties(std::span<const ScoredPair> pairs, std::size_t count,
                                     std::uint64_t seed);

// Pre-labeled pairs (human annotations) enter through the same interface.
std::vector<LabeledPair> labeled_from_input(std::span<const ScoredPair> pairs);

// Reason-generation prompt. Placeholders: {question}, {response_a},
// {response_b}, {preference}, {criteria}.
std::string default_reason_prompt();

struct PairwiseBuild {
  std::vector<PairwiseRecord> records;
  BuildStats stats;
};

PairwiseBuild build_pairwise(std::span<const LabeledPair> pairs, const prompt::TemplatePool& pool,
                             backend::Client& reason_judge, std::uint64_t seed,
                             const std::string& reason_prompt = default_reason_prompt(),
                             double judge_temperature = 0.0);

}  // namespace critic::curation
