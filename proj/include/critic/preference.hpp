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
#include "critic/verdict.hpp"

namespace critic::preference {

// How a parsed judge reply becomes the relative score a_ij (y_j measured
// against y_i, with y_i in slot A). Categorical: B -> +1, A -> -1, Tie -> 0.
// Numeric: the reply's number, parsed with the pointwise rules.
enum class VerdictToScore { kCategorical, kNumeric };

std::string_view to_string(VerdictToScore m) noexcept;
VerdictToScore verdict_to_score_from_string(std::string_view s);

// Judge decoding. Defaults to greedy decoding so judgments are reproducible.
struct JudgeSettings {
  double temperature = 0.0;
  double top_p = 1.0;
  int max_tokens = 1024;
};

struct CellProvenance {
  std::string template_id;
  std::string raw_hash;  // SHA-256 of the judge reply
  bool valid = false;
  std::string error;  // parse failure message for invalid cells
};

// K x K relative-score matrix; the diagonal is never populated or read.
class PairScoreMatrix {
 public:
  PairScoreMatrix(std::string task_id, int k);

  const std::string& task_id() const noexcept { return task_id_; }
  int k() const noexcept { return k_; }

  double at(int i, int j) const;
  const CellProvenance& provenance(int i, int j) const;
  void set(int i, int j, double value, CellProvenance provenance);
  void mark_invalid(int i, int j, CellProvenance provenance);

  bool complete() const noexcept;
  int invalid_cells() const noexcept;

 private:
  std::size_t index(int i, int j) const;

  std::string task_id_;
  int k_;
  std::vector<double> values_;
  std::vector<CellProvenance> provenance_;
};

struct ScoringOptions {
  std::uint64_t seed = 0;
  VerdictToScore mode = VerdictToScore::kCategorical;
  ScoreScale numeric_scale{-1.0, 1.0};
  JudgeSettings judge;
  // Strict: an unparseable cell raises AmbiguousVerdict immediately.
  bool strict = false;
  // Concurrent cell evaluations; cell order in the matrix is fixed regardless.
  int parallelism = 1;
  const verdict::PairwiseLexicon* lexicon = nullptr;
};

// The judge request for one ordered pair: image part followed by the
// rendered pairwise prompt, y_i in slot A and y_j in slot B.
backend::ChatRequest pair_request(const EvalTask& task, const CandidateResponse& slot_a,
                                  const CandidateResponse& slot_b, const prompt::PromptTemplate& t,
                                  std::string_view model, const JudgeSettings& judge);

// Template used for cell (i, j) of a task's matrix.
const prompt::PromptTemplate& cell_template(const prompt::TemplatePool& pool, std::uint64_t seed,
                                            std::string_view task_id, int k, int i, int j);

PairScoreMatrix score_ordered_pairs(const EvalTask& task, std::span<const CandidateResponse> responses,
                                    backend::Client& judge, const prompt::TemplatePool& pool,
                                    const ScoringOptions& options);

struct RewardedResponse {
  CandidateResponse response;
  double reward = 0.0;
};

// r_i = sum_{k != i} a_ki - sum_{l != i} a_il. `responses` supplies the
// records in matrix order; IncompleteMatrix if any cell is invalid.
std::vector<RewardedResponse> aggregate_rewards(const PairScoreMatrix& m,
                                                std::span<const CandidateResponse> responses);
std::vector<double> aggregate_rewards(const PairScoreMatrix& m);

struct PreferencePair {
  EvalTask task;
  CandidateResponse chosen;
  CandidateResponse rejected;
  double chosen_reward = 0.0;
  double rejected_reward = 0.0;
  int round = 0;
};

// Highest vs lowest reward, ties broken by the smallest ordinal. nullopt
// (skip) when every reward is equal.
std::optional<PreferencePair> select_preference_pair(const EvalTask& task,
                                                     std::span<const RewardedResponse> rewarded,
                                                     int round);

CandidateResponse best_of_n(const EvalTask& task, std::span<const CandidateResponse> responses,
                            backend::Client& judge, const prompt::TemplatePool& pool,
                            const ScoringOptions& options);

struct LoopConfig {
  int rounds = 3;
  backend::SamplingPolicy sampling;
  VerdictToScore verdict_to_score = VerdictToScore::kCategorical;
  ScoreScale numeric_scale{-1.0, 1.0};
  bool skip_on_tie_collapse = true;
  bool strict_matrix = false;
  JudgeSettings judge;
  std::uint64_t seed = 0;

  static LoopConfig from_json(const nlohmann::json& doc);
  nlohmann::ordered_json to_json() const;
};

void validate(const LoopConfig& config);

nlohmann::ordered_json to_json(const PreferencePair& pair);

struct RoundResult {
  std::string run_id;
  std::filesystem::path dataset_path;
  std::filesystem::path manifest_path;
  nlohmann::ordered_json manifest;
  std::vector<PreferencePair> pairs;
  double mean_chosen_reward = 0.0;
};

// One generate -> score -> aggregate -> select pass over all tasks. Writes
// round_<r>.jsonl and round_<r>.manifest.json under out_dir.
RoundResult run_round(std::span<const EvalTask> tasks, backend::Client& generator,
                      backend::Client& judge, const prompt::TemplatePool& pool,
                      const LoopConfig& config, int round_index,
                      const std::filesystem::path& out_dir,
                      const std::optional<std::string>& parent_run_id = std::nullopt);

// One generator endpoint per round (nullptr = not yet provided). Stops with
// HaltBetweenRounds at the first missing endpoint, after earlier rounds'
// artifacts are written.
std::vector<RoundResult> run_iterative(std::span<const EvalTask> tasks,
                                       std::span<backend::Client* const> generators,
                                       backend::Client& judge, const prompt::TemplatePool& pool,
                                       const LoopConfig& config, const std::filesystem::path& out_dir);

}  // namespace critic::preference
