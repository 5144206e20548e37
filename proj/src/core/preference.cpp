#include "critic/preference.hpp"

#include <algorithm>
#include <mutex>

#include "critic/io.hpp"
#include "critic/random.hpp"

namespace critic::preference {

std::string_view to_string(VerdictToScore m) noexcept {
  return m == VerdictToScore::kCategorical ? "categorical" : "numeric";
}

VerdictToScore verdict_to_score_from_string(std::string_view s) {
  if (s == "categorical") return VerdictToScore::kCategorical;
  if (s == "numeric") return VerdictToScore::kNumeric;
  fail(ErrorCode::kInvalidArgument, "unknown verdict_to_score '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// PairScoreMatrix

PairScoreMatrix::PairScoreMatrix(std::string task_id, int k)
    : task_id_(std::move(task_id)),
      k_(k),
      values_(static_cast<std::size_t>(k) * static_cast<std::size_t>(std::max(k, 0)), 0.0),
      provenance_(values_.size()) {
  if (k < 2) fail(ErrorCode::kInvalidArgument, "pair score matrix needs k >= 2");
}

std::size_t PairScoreMatrix::index(int i, int j) const {
  if (i < 0 || j < 0 || i >= k_ || j >= k_) fail(ErrorCode::kInvalidArgument, "matrix index out of range");
  if (i == j) fail(ErrorCode::kInvalidArgument, "matrix diagonal is undefined");
  return static_cast<std::size_t>(i) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(j);
}

double PairScoreMatrix::at(int i, int j) const {
  const auto idx = index(i, j);
  if (!provenance_[idx].valid) {
    fail(ErrorCode::kIncompleteMatrix,
         "cell (" + std::to_string(i) + "," + std::to_string(j) + ") of task '" + task_id_ + "' is unset");
  }
  return values_[idx];
}

const CellProvenance& PairScoreMatrix::provenance(int i, int j) const { return provenance_[index(i, j)]; }

void PairScoreMatrix::set(int i, int j, double value, CellProvenance provenance) {
  const auto idx = index(i, j);
  provenance.valid = true;
  values_[idx] = value;
  provenance_[idx] = std::move(provenance);
}

void PairScoreMatrix::mark_invalid(int i, int j, CellProvenance provenance) {
  const auto idx = index(i, j);
  provenance.valid = false;
  values_[idx] = 0.0;
  provenance_[idx] = std::move(provenance);
}

bool PairScoreMatrix::complete() const noexcept { return invalid_cells() == 0; }

int PairScoreMatrix::invalid_cells() const noexcept {
  int n = 0;
  for (int i = 0; i < k_; ++i) {
    for (int j = 0; j < k_; ++j) {
      if (i != j && !provenance_[static_cast<std::size_t>(i * k_ + j)].valid) ++n;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Scoring

backend::ChatRequest pair_request(const EvalTask& task, const CandidateResponse& slot_a,
                                  const CandidateResponse& slot_b, const prompt::PromptTemplate& t,
                                  std::string_view model, const JudgeSettings& judge) {
  backend::ChatRequest r;
  r.model = std::string(model);
  backend::Message user;
  if (!task.image.empty()) user.content.push_back(backend::ContentPart::image_part(task.image));
  user.content.push_back(backend::ContentPart::text_part(prompt::render_pairwise(task, slot_a, slot_b, t)));
  r.messages.push_back(std::move(user));
  r.temperature = judge.temperature;
  r.top_p = judge.top_p;
  r.max_tokens = judge.max_tokens;
  return r;
}

const prompt::PromptTemplate& cell_template(const prompt::TemplatePool& pool, std::uint64_t seed,
                                            std::string_view task_id, int k, int i, int j) {
  const auto task_seed = rng::mix(seed, rng::fnv1a(task_id));
  return prompt::assign_template(pool, task_seed, static_cast<std::uint64_t>(i * k + j));
}

PairScoreMatrix score_ordered_pairs(const EvalTask& task, std::span<const CandidateResponse> responses,
                                    backend::Client& judge, const prompt::TemplatePool& pool,
                                    const ScoringOptions& options) {
  const int k = static_cast<int>(responses.size());
  if (k < 2) fail(ErrorCode::kInvalidArgument, "ordered-pair scoring needs at least 2 responses");
  for (const auto& r : responses) {
    if (r.task_id != task.task_id) {
      fail(ErrorCode::kTaskMismatch, "response '" + r.response_id + "' does not belong to task '" +
                                         task.task_id + "'");
    }
  }
  const auto& lexicon = options.lexicon ? *options.lexicon : verdict::PairwiseLexicon::defaults();

  PairScoreMatrix m(task.task_id, k);
  std::mutex mu;
  const auto cells = static_cast<std::size_t>(k * k);
  backend::parallel_for(cells, options.parallelism, [&](std::size_t cell) {
    const int i = static_cast<int>(cell) / k;
    const int j = static_cast<int>(cell) % k;
    if (i == j) return;
    const auto& t = cell_template(pool, options.seed, task.task_id, k, i, j);
    const auto request = pair_request(task, responses[static_cast<std::size_t>(i)],
                                      responses[static_cast<std::size_t>(j)], t,
                                      judge.config().model, options.judge);
    const auto raw = judge.complete(request);
    CellProvenance prov{t.template_id, backend::sha256_hex(raw), false, {}};
    try {
      double value = 0.0;
      if (options.mode == VerdictToScore::kCategorical) {
        switch (verdict::parse_pairwise(raw, lexicon).verdict) {
          case Verdict::kB: value = 1.0; break;
          case Verdict::kA: value = -1.0; break;
          case Verdict::kTie: value = 0.0; break;
        }
      } else {
        value = verdict::parse_pointwise(raw, options.numeric_scale).score;
      }
      std::lock_guard lock(mu);
      m.set(i, j, value, std::move(prov));
    } catch (const Error& e) {
      const bool parse_failure = e.code() == ErrorCode::kAmbiguousVerdict ||
                                 e.code() == ErrorCode::kNoScoreFound ||
                                 e.code() == ErrorCode::kScoreOutOfRange ||
                                 e.code() == ErrorCode::kInvalidArgument;
      if (!parse_failure) throw;
      if (options.strict) {
        fail(ErrorCode::kAmbiguousVerdict, "task '" + task.task_id + "' cell (" + std::to_string(i) +
                                               "," + std::to_string(j) + "): " + e.what());
      }
      prov.error = e.what();
      std::lock_guard lock(mu);
      m.mark_invalid(i, j, std::move(prov));
    }
  });
  return m;
}

std::vector<double> aggregate_rewards(const PairScoreMatrix& m) {
  if (!m.complete()) {
    fail(ErrorCode::kIncompleteMatrix, "task '" + m.task_id() + "' has " +
                                           std::to_string(m.invalid_cells()) + " unparsed cells");
  }
  const int k = m.k();
  std::vector<double> rewards(static_cast<std::size_t>(k), 0.0);
  for (int i = 0; i < k; ++i) {
    double as_b = 0.0, as_a = 0.0;
    for (int other = 0; other < k; ++other) {
      if (other == i) continue;
      as_b += m.at(other, i);
      as_a += m.at(i, other);
    }
    rewards[static_cast<std::size_t>(i)] = as_b - as_a;
  }
  return rewards;
}

std::vector<RewardedResponse> aggregate_rewards(const PairScoreMatrix& m,
                                                std::span<const CandidateResponse> responses) {
  if (static_cast<int>(responses.size()) != m.k()) {
    fail(ErrorCode::kInvalidArgument, "response count does not match matrix size");
  }
  const auto rewards = aggregate_rewards(m);
  std::vector<RewardedResponse> out;
  out.reserve(responses.size());
  for (std::size_t i = 0; i < responses.size(); ++i) out.push_back({responses[i], rewards[i]});
  return out;
}

std::optional<PreferencePair> select_preference_pair(const EvalTask& task,
                                                     std::span<const RewardedResponse> rewarded,
                                                     int round) {
  if (rewarded.empty()) fail(ErrorCode::kInvalidArgument, "no rewarded responses to select from");
  std::size_t best = 0, worst = 0;
  for (std::size_t i = 1; i < rewarded.size(); ++i) {
    if (rewarded[i].reward > rewarded[best].reward) best = i;
    if (rewarded[i].reward < rewarded[worst].reward) worst = i;
  }
  if (!(rewarded[best].reward > rewarded[worst].reward)) return std::nullopt;
  return PreferencePair{task,
                        rewarded[best].response,
                        rewarded[worst].response,
                        rewarded[best].reward,
                        rewarded[worst].reward,
                        round};
}

CandidateResponse best_of_n(const EvalTask& task, std::span<const CandidateResponse> responses,
                            backend::Client& judge, const prompt::TemplatePool& pool,
                            const ScoringOptions& options) {
  if (responses.empty()) fail(ErrorCode::kInvalidArgument, "best-of-n needs at least one response");
  if (responses.size() == 1) return responses.front();
  const auto m = score_ordered_pairs(task, responses, judge, pool, options);
  const auto rewards = aggregate_rewards(m);
  const auto best = static_cast<std::size_t>(
      std::distance(rewards.begin(), std::max_element(rewards.begin(), rewards.end())));
  return responses[best];
}

// ---------------------------------------------------------------------------
// Loop configuration and serialization

LoopConfig LoopConfig::from_json(const nlohmann::json& doc) {
  LoopConfig c;
  try {
    c.rounds = doc.value("rounds", c.rounds);
    if (doc.contains("sampling")) {
      const auto& s = doc.at("sampling");
      c.sampling.k = s.value("k", c.sampling.k);
      c.sampling.temperature = s.value("temperature", c.sampling.temperature);
      c.sampling.top_p = s.value("top_p", c.sampling.top_p);
      c.sampling.max_tokens = s.value("max_tokens", c.sampling.max_tokens);
      c.sampling.strict = s.value("strict", c.sampling.strict);
    }
    if (doc.contains("verdict_to_score")) {
      c.verdict_to_score = verdict_to_score_from_string(doc.at("verdict_to_score").get<std::string>());
    }
    if (doc.contains("numeric_scale")) {
      c.numeric_scale = {doc.at("numeric_scale").at("min").get<double>(),
                         doc.at("numeric_scale").at("max").get<double>()};
    }
    c.skip_on_tie_collapse = doc.value("skip_on_tie_collapse", c.skip_on_tie_collapse);
    c.strict_matrix = doc.value("strict_matrix", c.strict_matrix);
    if (doc.contains("judge")) {
      const auto& j = doc.at("judge");
      c.judge.temperature = j.value("temperature", c.judge.temperature);
      c.judge.top_p = j.value("top_p", c.judge.top_p);
      c.judge.max_tokens = j.value("max_tokens", c.judge.max_tokens);
    }
    c.seed = doc.value("seed", c.seed);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed loop config: ") + ex.what());
  }
  validate(c);
  return c;
}

nlohmann::ordered_json LoopConfig::to_json() const {
  nlohmann::ordered_json j;
  j["rounds"] = rounds;
  j["sampling"] = {{"k", sampling.k},
                   {"temperature", sampling.temperature},
                   {"top_p", sampling.top_p},
                   {"max_tokens", sampling.max_tokens},
                   {"strict", sampling.strict}};
  j["verdict_to_score"] = preference::to_string(verdict_to_score);
  if (verdict_to_score == VerdictToScore::kNumeric) {
    j["numeric_scale"] = {{"min", numeric_scale.min}, {"max", numeric_scale.max}};
  }
  j["skip_on_tie_collapse"] = skip_on_tie_collapse;
  j["strict_matrix"] = strict_matrix;
  j["judge"] = {{"temperature", judge.temperature}, {"top_p", judge.top_p}, {"max_tokens", judge.max_tokens}};
  j["seed"] = seed;
  return j;
}

void validate(const LoopConfig& config) {
  if (config.rounds < 1) fail(ErrorCode::kInvalidArgument, "rounds must be >= 1");
  if (config.sampling.k < 2) fail(ErrorCode::kInvalidArgument, "preference generation needs k >= 2");
  if (!config.skip_on_tie_collapse) {
    fail(ErrorCode::kInvalidArgument,
         "skip_on_tie_collapse=false would emit pairs with chosen_reward == rejected_reward");
  }
  if (config.verdict_to_score == VerdictToScore::kNumeric) validate(config.numeric_scale);
}

nlohmann::ordered_json to_json(const PreferencePair& pair) {
  nlohmann::ordered_json j;
  j["task_id"] = pair.task.task_id;
  j["question"] = pair.task.question;
  j["image_ref"] = pair.task.image.value;
  j["chosen_text"] = pair.chosen.text;
  j["rejected_text"] = pair.rejected.text;
  j["chosen_reward"] = pair.chosen_reward;
  j["rejected_reward"] = pair.rejected_reward;
  j["round"] = pair.round;
  return j;
}

// ---------------------------------------------------------------------------
// Rounds

namespace {

struct TaskOutcome {
  std::optional<PreferencePair> pair;
  bool skipped = false;
  bool failed = false;
  int parse_failures = 0;
  ErrorCode failure_code = ErrorCode::kOk;
  std::string failure;
};

std::uint64_t round_seed(std::uint64_t seed, int round) {
  return rng::mix(seed, static_cast<std::uint64_t>(round));
}

}  // namespace

RoundResult run_round(std::span<const EvalTask> tasks, backend::Client& generator,
                      backend::Client& judge, const prompt::TemplatePool& pool,
                      const LoopConfig& config, int round_index,
                      const std::filesystem::path& out_dir,
                      const std::optional<std::string>& parent_run_id) {
  validate(config);
  if (tasks.empty()) fail(ErrorCode::kInvalidArgument, "run_round needs at least one task");
  if (pool.empty()) fail(ErrorCode::kEmptyPool, "run_round needs a pairwise template pool");

  const auto seed = round_seed(config.seed, round_index);
  const auto gen_before = generator.stats();
  const auto judge_before = judge.stats();

  ScoringOptions scoring;
  scoring.seed = seed;
  scoring.mode = config.verdict_to_score;
  scoring.numeric_scale = config.numeric_scale;
  scoring.judge = config.judge;
  scoring.strict = config.strict_matrix;

  std::vector<TaskOutcome> outcomes(tasks.size());
  const int workers = std::min(generator.config().max_parallel, judge.config().max_parallel);
  backend::parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const auto& task = tasks[t];
    auto& out = outcomes[t];
    try {
      auto generated = backend::generate_responses(task, config.sampling, generator, seed);
      if (generated.responses.size() < 2) {
        fail(ErrorCode::kPartialGeneration, "fewer than 2 responses generated");
      }
      const auto m = score_ordered_pairs(task, generated.responses, judge, pool, scoring);
      out.parse_failures = m.invalid_cells();
      if (!m.complete()) {
        fail(ErrorCode::kIncompleteMatrix, std::to_string(out.parse_failures) + " unparsed judge replies");
      }
      const auto rewarded = aggregate_rewards(m, generated.responses);
      out.pair = select_preference_pair(task, rewarded, round_index);
      out.skipped = !out.pair.has_value();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kAuthError) throw;
      out.failed = true;
      out.failure_code = e.code();
      out.failure = e.what();
      if (e.code() == ErrorCode::kAmbiguousVerdict) out.parse_failures = std::max(out.parse_failures, 1);
    }
  });

  // Systemic: every task died on the transport.
  const bool all_transport = std::all_of(outcomes.begin(), outcomes.end(), [](const TaskOutcome& o) {
    return o.failed && o.failure_code == ErrorCode::kTransportError;
  });
  if (all_transport) {
    fail(ErrorCode::kTransportError, "round " + std::to_string(round_index) +
                                         ": every task failed on the backend (" +
                                         outcomes.front().failure + ")");
  }

  RoundResult result;
  std::vector<nlohmann::ordered_json> records;
  nlohmann::ordered_json failures = nlohmann::ordered_json::array();
  std::size_t skips = 0, failed = 0;
  std::int64_t parse_failures = 0;
  double chosen_sum = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    auto& o = outcomes[t];
    parse_failures += o.parse_failures;
    if (o.failed) {
      ++failed;
      failures.push_back({{"task_id", tasks[t].task_id}, {"error", o.failure}});
    } else if (o.skipped) {
      ++skips;
    } else {
      records.push_back(to_json(*o.pair));
      chosen_sum += o.pair->chosen_reward;
      result.pairs.push_back(std::move(*o.pair));
    }
  }
  result.mean_chosen_reward =
      result.pairs.empty() ? 0.0 : chosen_sum / static_cast<double>(result.pairs.size());

  const auto gen_after = generator.stats();
  const auto judge_after = judge.stats();
  std::uint64_t hits = judge_after.cache_hits - judge_before.cache_hits;
  std::uint64_t misses = judge_after.cache_misses - judge_before.cache_misses;
  if (&generator != &judge) {
    hits += gen_after.cache_hits - gen_before.cache_hits;
    misses += gen_after.cache_misses - gen_before.cache_misses;
  }

  nlohmann::ordered_json snapshot;
  snapshot["loop"] = config.to_json();
  snapshot["generator"] = {{"endpoint_url", generator.endpoint_url()}, {"model", generator.config().model}};
  snapshot["judge"] = {{"endpoint_url", judge.endpoint_url()}, {"model", judge.config().model}};
  nlohmann::ordered_json template_ids = nlohmann::ordered_json::array();
  for (const auto& t : pool.templates()) template_ids.push_back(t.template_id);
  snapshot["templates"] = std::move(template_ids);

  std::string id_material = snapshot.dump() + "\n" + std::to_string(round_index) + "\n" +
                            parent_run_id.value_or("") + "\n";
  for (const auto& t : tasks) id_material += t.task_id + "\n";
  result.run_id = backend::sha256_hex(id_material).substr(0, 16);

  const auto stem = "round_" + std::to_string(round_index);
  result.dataset_path = out_dir / (stem + ".jsonl");
  result.manifest_path = out_dir / (stem + ".manifest.json");

  auto& m = result.manifest;
  m["run_id"] = result.run_id;
  m["parent_run_id"] = parent_run_id ? nlohmann::ordered_json(*parent_run_id) : nlohmann::ordered_json(nullptr);
  m["round"] = round_index;
  m["seed"] = config.seed;
  m["round_seed"] = seed;
  m["config"] = std::move(snapshot);
  m["counts"] = {{"tasks", tasks.size()},
                 {"pairs", result.pairs.size()},
                 {"skips", skips},
                 {"parse_failures", parse_failures},
                 {"failed_tasks", failed}};
  m["cache"] = {{"hits", hits}, {"misses", misses}};
  m["mean_chosen_reward"] = result.mean_chosen_reward;
  m["dataset"] = result.dataset_path.filename().string();
  m["failures"] = std::move(failures);

  io::write_text_atomic(result.dataset_path, io::to_jsonl(records));
  io::write_text_atomic(result.manifest_path, m.dump(2) + "\n");
  return result;
}

std::vector<RoundResult> run_iterative(std::span<const EvalTask> tasks,
                                       std::span<backend::Client* const> generators,
                                       backend::Client& judge, const prompt::TemplatePool& pool,
                                       const LoopConfig& config, const std::filesystem::path& out_dir) {
  validate(config);
  if (static_cast<int>(generators.size()) > config.rounds) {
    fail(ErrorCode::kInvalidArgument, "more generator endpoints than rounds");
  }
  std::vector<RoundResult> results;
  std::optional<std::string> parent;
  for (int r = 1; r <= config.rounds; ++r) {
    const auto idx = static_cast<std::size_t>(r - 1);
    if (idx >= generators.size() || generators[idx] == nullptr) {
      fail(ErrorCode::kHaltBetweenRounds,
           "no generator endpoint for round " + std::to_string(r) +
               "; supply the checkpoint trained on round " + std::to_string(r - 1) + " data");
    }
    results.push_back(run_round(tasks, *generators[idx], judge, pool, config, r, out_dir, parent));
    parent = results.back().run_id;
  }
  return results;
}

}  // namespace critic::preference
