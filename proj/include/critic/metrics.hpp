#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "critic/types.hpp"

namespace critic::metrics {

struct ScoredInstance {
  std::string task_id;
  std::string producer_model;
  double score_by_eval_a = 0.0;
  double score_by_eval_b = 0.0;
};

struct Battle {
  std::string task_id;
  std::string model_a;
  std::string model_b;
  Verdict outcome = Verdict::kTie;
};

struct EloConfig {
  double initial_rating = 1000.0;
  double k_factor = 32.0;
  int permutations = 100;
  std::uint64_t seed = 0;
};

double pearson(std::span<const double> xs, std::span<const double> ys);

// Kendall tau-b, O(n log n) (Knight's merge-sort counting).
double kendall_tau_b(std::span<const double> a, std::span<const double> b);

double pairwise_accuracy(std::span<const Verdict> predicted, std::span<const Verdict> gold,
                         bool with_tie);

// Ratings are tracked in fixed point (units of 2^-24 rating points) so the
// zero-sum property of each update holds exactly.
inline constexpr double kEloUnitsPerPoint = 16777216.0;

struct EloResult {
  std::map<std::string, double> mean_rating;
  // Sum over permutations of each model's final rating, in fixed-point units.
  std::map<std::string, std::int64_t> rating_units_total;
  // Final ratings of every permutation, in fixed-point units.
  std::vector<std::map<std::string, std::int64_t>> per_permutation_units;
};

// Online Elo replayed over `permutations` seeded shuffles of the log and
// averaged per model.
EloResult elo_detailed(std::span<const Battle> battles, const EloConfig& config);
std::map<std::string, double> elo_ratings(std::span<const Battle> battles, const EloConfig& config);

struct ModelScoreRow {
  std::string model;
  double mean_eval_a = 0.0;
  double mean_eval_b = 0.0;
  std::size_t count = 0;
};

// Per-model mean score for each evaluator, ordered by model name.
std::vector<ModelScoreRow> model_level_scores(std::span<const ScoredInstance> instances);

// Agreement report over benchmark-tagged records.
struct BenchmarkScore {
  std::string benchmark;
  ScoredInstance instance;
};

struct JudgedBattle {
  std::string benchmark;
  Battle gold;        // human / reference outcome
  Verdict predicted;  // evaluator outcome
};

struct AgreementReport {
  nlohmann::ordered_json document;
  std::string table;
};

AgreementReport agreement_report(std::span<const BenchmarkScore> scores,
                                 std::span<const JudgedBattle> battles, const EloConfig& elo);

}  // namespace critic::metrics
