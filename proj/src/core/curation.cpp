#include "critic/curation.hpp"

#include <array>
#include <cmath>
#include <numeric>

#include "critic/io.hpp"
#include "critic/random.hpp"
#include "critic/verdict.hpp"

namespace critic::curation {

std::string_view to_string(Preference p) noexcept {
  switch (p) {
    case Preference::kFirst: return "first";
    case Preference::kSecond: return "second";
    case Preference::kTie: return "tie";
  }
  return "tie";
}

Preference preference_from_string(std::string_view s) {
  if (s == "first" || s == "A" || s == "a") return Preference::kFirst;
  if (s == "second" || s == "B" || s == "b") return Preference::kSecond;
  if (s == "tie" || s == "Tie") return Preference::kTie;
  fail(ErrorCode::kInvalidArgument, "unknown preference label '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Records

nlohmann::ordered_json to_json(const PointwiseRecord& r) {
  nlohmann::ordered_json j;
  j["image_ref"] = r.image_ref;
  j["question"] = r.question;
  j["response_text"] = r.response_text;
  j["reference_text"] = r.reference_text ? nlohmann::ordered_json(*r.reference_text) : nlohmann::ordered_json(nullptr);
  j["criteria_prompt"] = r.criteria_prompt;
  j["score"] = r.score;
  j["reason"] = r.reason;
  j["metadata"] = nlohmann::ordered_json::parse(r.metadata.dump());
  return j;
}

nlohmann::ordered_json to_json(const PairwiseRecord& r) {
  nlohmann::ordered_json j;
  j["image_ref"] = r.image_ref;
  j["question"] = r.question;
  j["response_1"] = r.response_1;
  j["response_2"] = r.response_2;
  j["criteria_prompt"] = r.criteria_prompt;
  j["preference"] = to_string(r.preference);
  j["reason"] = r.reason;
  j["metadata"] = nlohmann::ordered_json::parse(r.metadata.dump());
  return j;
}

PointwiseRecord pointwise_record_from_json(const nlohmann::json& doc) {
  PointwiseRecord r;
  try {
    r.image_ref = doc.at("image_ref").get<std::string>();
    r.question = doc.at("question").get<std::string>();
    r.response_text = doc.at("response_text").get<std::string>();
    if (doc.contains("reference_text") && !doc.at("reference_text").is_null()) {
      r.reference_text = doc.at("reference_text").get<std::string>();
    }
    r.criteria_prompt = doc.at("criteria_prompt").get<std::string>();
    r.score = doc.at("score").get<double>();
    r.reason = doc.at("reason").get<std::string>();
    r.metadata = doc.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed pointwise record: ") + ex.what());
  }
  return r;
}

PairwiseRecord pairwise_record_from_json(const nlohmann::json& doc) {
  PairwiseRecord r;
  try {
    r.image_ref = doc.at("image_ref").get<std::string>();
    r.question = doc.at("question").get<std::string>();
    r.response_1 = doc.at("response_1").get<std::string>();
    r.response_2 = doc.at("response_2").get<std::string>();
    r.criteria_prompt = doc.at("criteria_prompt").get<std::string>();
    r.preference = preference_from_string(doc.at("preference").get<std::string>());
    r.reason = doc.at("reason").get<std::string>();
    r.metadata = doc.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed pairwise record: ") + ex.what());
  }
  return r;
}

std::vector<PointwiseRecord> load_pointwise_records(const std::filesystem::path& path) {
  std::vector<PointwiseRecord> out;
  for (const auto& doc : io::read_jsonl(path)) out.push_back(pointwise_record_from_json(doc));
  return out;
}

std::vector<PairwiseRecord> load_pairwise_records(const std::filesystem::path& path) {
  std::vector<PairwiseRecord> out;
  for (const auto& doc : io::read_jsonl(path)) out.push_back(pairwise_record_from_json(doc));
  return out;
}

void write_records(const std::filesystem::path& path, std::span<const PointwiseRecord> records) {
  std::vector<nlohmann::ordered_json> docs;
  for (const auto& r : records) docs.push_back(to_json(r));
  io::write_text_atomic(path, io::to_jsonl(docs));
}

void write_records(const std::filesystem::path& path, std::span<const PairwiseRecord> records) {
  std::vector<nlohmann::ordered_json> docs;
  for (const auto& r : records) docs.push_back(to_json(r));
  io::write_text_atomic(path, io::to_jsonl(docs));
}

namespace {

ScoredCandidate candidate_from_json(const nlohmann::json& doc, const EvalTask& task, std::string_view slot) {
  ScoredCandidate c;
  c.response.response_id = doc.value("response_id", task.task_id + "#" + std::string(slot));
  c.response.task_id = task.task_id;
  c.response.text = doc.at("text").get<std::string>();
  c.response.producer_model = doc.value("producer", std::string{});
  if (doc.contains("dims")) c.dimension_scores = doc.at("dims").get<std::vector<double>>();
  validate(c.response);
  return c;
}

}  // namespace

ScoredPair scored_pair_from_json(const nlohmann::json& doc) {
  ScoredPair p;
  try {
    p.task = io::task_from_json(doc);
    p.a = candidate_from_json(doc.at("response_a"), p.task, "a");
    p.b = candidate_from_json(doc.at("response_b"), p.task, "b");
    if (doc.contains("label") && !doc.at("label").is_null()) {
      p.label = doc.at("label").get<std::string>();
      preference_from_string(*p.label);
    }
    p.provenance = doc.value("provenance", std::string{});
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed scored pair: ") + ex.what());
  }
  return p;
}

std::vector<ScoredPair> load_scored_pairs(const std::filesystem::path& path) {
  std::vector<ScoredPair> out;
  for (const auto& doc : io::read_jsonl(path)) out.push_back(scored_pair_from_json(doc));
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise

PointwiseBuild build_pointwise(std::span<const EvalTask> tasks,
                               std::span<const CandidateResponse> responses,
                               const prompt::TemplatePool& presets, backend::Client& judge,
                               double judge_temperature) {
  struct Job {
    const EvalTask* task;
    const CandidateResponse* response;
    const prompt::PromptTemplate* preset;
  };
  PointwiseBuild out;
  std::vector<Job> jobs;
  for (const auto& task : tasks) {
    for (const auto& response : responses) {
      if (response.task_id != task.task_id) continue;
      for (const auto& preset : presets.templates()) {
        if (preset.setting != prompt::Setting::kPointwise) continue;
        if (!preset.scenario.empty() && preset.scenario != task.source) continue;
        if (!task.reference_answer && prompt::references_placeholder(preset, "reference")) {
          ++out.stats.skipped_routing;
          continue;
        }
        jobs.push_back({&task, &response, &preset});
      }
    }
  }

  enum class Status { kOk, kParse, kBackend };
  std::vector<std::optional<PointwiseRecord>> slots(jobs.size());
  std::vector<Status> status(jobs.size(), Status::kOk);
  backend::parallel_for(jobs.size(), judge.config().max_parallel, [&](std::size_t idx) {
    const auto& [task, response, preset] = jobs[idx];
    backend::ChatRequest request;
    request.model = judge.config().model;
    request.temperature = judge_temperature;
    backend::Message user;
    if (!task->image.empty()) user.content.push_back(backend::ContentPart::image_part(task->image));
    const auto prompt_text = prompt::render_pointwise(*task, *response, *preset);
    user.content.push_back(backend::ContentPart::text_part(prompt_text));
    request.messages.push_back(std::move(user));

    std::string raw;
    try {
      raw = judge.complete(request);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kAuthError) throw;
      status[idx] = Status::kBackend;
      return;
    }
    PointwiseRecord rec;
    rec.image_ref = task->image.value;
    rec.question = task->question;
    rec.response_text = response->text;
    rec.reference_text = task->reference_answer;
    rec.criteria_prompt = prompt_text;
    rec.metadata = {{"template_id", preset->template_id},
                    {"task_id", task->task_id},
                    {"response_id", response->response_id},
                    {"producer_model", response->producer_model}};
    try {
      if (preset->output_format == prompt::OutputFormat::kDualScoreFirstLine) {
        const auto j = verdict::parse_dual_score(raw, *preset->score_scale);
        rec.score = j.candidate_score;
        rec.reason = j.reason;
        rec.metadata["reference_score"] = j.reference_score;
      } else {
        const auto j = verdict::parse_pointwise(raw, *preset->score_scale);
        rec.score = j.score;
        rec.reason = j.reason;
      }
    } catch (const Error&) {
      status[idx] = Status::kParse;
      return;
    }
    slots[idx] = std::move(rec);
  });

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (status[i] == Status::kParse) ++out.stats.parse_failures;
    if (status[i] == Status::kBackend) ++out.stats.backend_failures;
    if (slots[i]) out.records.push_back(std::move(*slots[i]));
  }
  out.stats.emitted = out.records.size();
  return out;
}

// ---------------------------------------------------------------------------
// Pair filters

namespace {

void check_dimensions(const ScoredPair& p) {
  if (p.a.dimension_scores.empty() || p.a.dimension_scores.size() != p.b.dimension_scores.size()) {
    fail(ErrorCode::kDimensionMismatch, "pair for task '" + p.task.task_id + "' has " +
                                            std::to_string(p.a.dimension_scores.size()) + " vs " +
                                            std::to_string(p.b.dimension_scores.size()) +
                                            " dimension scores");
  }
}

double mean_gap(const ScoredPair& p) {
  double total = 0.0;
  for (std::size_t d = 0; d < p.a.dimension_scores.size(); ++d) {
    total += p.a.dimension_scores[d] - p.b.dimension_scores[d];
  }
  return total / static_cast<double>(p.a.dimension_scores.size());
}

LabeledPair labeled(const ScoredPair& p, Preference pref) {
  return {p.task, p.a.response, p.b.response, pref, p.provenance};
}

}  // namespace

std::vector<LabeledPair> filter_by_score_gap(std::span<const ScoredPair> pairs, double threshold) {
  if (!(threshold >= 0.0) || !std::isfinite(threshold)) {
    fail(ErrorCode::kInvalidArgument, "score-gap threshold must be a finite non-negative number");
  }
  std::vector<LabeledPair> out;
  for (const auto& p : pairs) {
    check_dimensions(p);
    const double gap = mean_gap(p);
    if (std::fabs(gap) - threshold > kGapTolerance) {
      out.push_back(labeled(p, gap > 0 ? Preference::kFirst : Preference::kSecond));
    }
  }
  return out;
}

bool is_tie_eligible(const ScoredPair& pair) {
  check_dimensions(pair);
  return pair.a.dimension_scores == pair.b.dimension_scores;
}

std::vector<LabeledPair> sample_ties(std::span<const ScoredPair> pairs, std::size_t count,
                                     std::uint64_t seed) {
  std::vector<const ScoredPair*> eligible;
  for (const auto& p : pairs) {
    if (is_tie_eligible(p)) eligible.push_back(&p);
  }
  if (count > eligible.size()) {
    fail(ErrorCode::kInsufficientTies, "requested " + std::to_string(count) + " tie pairs but only " +
                                           std::to_string(eligible.size()) + " are eligible");
  }
  rng::SplitMix gen(seed);
  // Partial Fisher-Yates: the first `count` slots are the sample.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(gen.below(eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  std::vector<LabeledPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(labeled(*eligible[i], Preference::kTie));
  return out;
}

std::vector<LabeledPair> labeled_from_input(std::span<const ScoredPair> pairs) {
  std::vector<LabeledPair> out;
  for (const auto& p : pairs) {
    if (!p.label) {
      fail(ErrorCode::kInvalidArgument, "pair for task '" + p.task.task_id + "' carries no label");
    }
    out.push_back(labeled(p, preference_from_string(*p.label)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pairwise

std::string default_reason_prompt() {
  return "You are given an image, a question, two responses, and the evaluation instructions that "
         "a judge was asked to follow. The correct judgment is already known: {preference}.\n\n"
         "Evaluation instructions:\n{criteria}\n\n"
         "Write the judge's answer. Begin by stating the judgment in the form the instructions "
         "request, then explain the reasons for it with specific references to the image and to "
         "the content of both responses. Do not contradict the known judgment.";
}

namespace {

constexpr std::array<std::string_view, 5> kReasonPlaceholders = {
    "question", "response_a", "response_b", "preference", "criteria"};

std::string preference_statement(Preference p) {
  switch (p) {
    case Preference::kFirst: return "Response A is better than Response B";
    case Preference::kSecond: return "Response B is better than Response A";
    case Preference::kTie: return "the two responses are equally good (tie)";
  }
  return {};
}

}  // namespace

PairwiseBuild build_pairwise(std::span<const LabeledPair> pairs, const prompt::TemplatePool& pool,
                             backend::Client& reason_judge, std::uint64_t seed,
                             const std::string& reason_prompt, double judge_temperature) {
  if (pool.empty()) fail(ErrorCode::kEmptyPool, "pairwise curation needs a template pool");
  // Validate the reason prompt before spending any judge calls.
  prompt::tokenize(reason_prompt, kReasonPlaceholders);

  PairwiseBuild out;
  enum class Status { kOk, kBackend, kEmpty };
  std::vector<std::optional<PairwiseRecord>> slots(pairs.size());
  std::vector<Status> status(pairs.size(), Status::kOk);
  backend::parallel_for(pairs.size(), reason_judge.config().max_parallel, [&](std::size_t idx) {
    const auto& pair = pairs[idx];
    const auto& t = prompt::assign_template(pool, seed, idx);
    const auto criteria = prompt::render_pairwise(pair.task, pair.first, pair.second, t);
    const auto reason_request_text = prompt::substitute(
        reason_prompt, kReasonPlaceholders,
        {{"question", pair.task.question},
         {"response_a", pair.first.text},
         {"response_b", pair.second.text},
         {"preference", preference_statement(pair.preference)},
         {"criteria", criteria}});

    backend::ChatRequest request;
    request.model = reason_judge.config().model;
    request.temperature = judge_temperature;
    backend::Message user;
    if (!pair.task.image.empty()) user.content.push_back(backend::ContentPart::image_part(pair.task.image));
    user.content.push_back(backend::ContentPart::text_part(reason_request_text));
    request.messages.push_back(std::move(user));

    std::string reason;
    try {
      reason = reason_judge.complete(request);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kAuthError) throw;
      status[idx] = Status::kBackend;
      return;
    }
    const auto first = reason.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
      status[idx] = Status::kEmpty;
      return;
    }
    reason = reason.substr(first, reason.find_last_not_of(" \t\r\n") - first + 1);

    PairwiseRecord rec;
    rec.image_ref = pair.task.image.value;
    rec.question = pair.task.question;
    rec.response_1 = pair.first.text;
    rec.response_2 = pair.second.text;
    rec.criteria_prompt = criteria;
    rec.preference = pair.preference;
    rec.reason = std::move(reason);
    rec.metadata = {{"template_id", t.template_id}, {"task_id", pair.task.task_id}};
    if (!pair.provenance.empty()) rec.metadata["provenance"] = pair.provenance;
    slots[idx] = std::move(rec);
  });

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (status[i] == Status::kBackend) ++out.stats.backend_failures;
    if (status[i] == Status::kEmpty) ++out.stats.parse_failures;
    if (slots[i]) out.records.push_back(std::move(*slots[i]));
  }
  out.stats.emitted = out.records.size();
  return out;
}

}  // namespace critic::curation
