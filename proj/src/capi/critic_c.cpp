#include "critic/critic.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include <nlohmann/json.hpp>

#include "critic/backend.hpp"
#include "critic/curation.hpp"
#include "critic/error.hpp"
#include "critic/io.hpp"
#include "critic/metrics.hpp"
#include "critic/preference.hpp"
#include "critic/prompt.hpp"
#include "critic/verdict.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

struct critic_pool {
  critic::prompt::TemplatePool pool;
};

struct critic_client {
  std::shared_ptr<critic::backend::ChatBackend> backend;
  std::unique_ptr<critic::backend::Client> client;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
critic_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return CRITIC_OK;
  } catch (const critic::Error& e) {
    g_last_error = e.what();
    return static_cast<critic_status>(e.code());
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return CRITIC_PARSE_ERROR;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CRITIC_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CRITIC_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return CRITIC_INTERNAL;
  }
}

void require(bool cond, const char* what) {
  if (!cond) critic::fail(critic::ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* dup(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

json parse(const char* text, const char* what) {
  require(text != nullptr, what);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    critic::fail(critic::ErrorCode::kParseError, std::string(what) + ": " + e.what());
  }
}

std::vector<critic::CandidateResponse> responses_from(const json& doc) {
  std::vector<critic::CandidateResponse> out;
  for (const auto& r : doc) out.push_back(critic::io::response_from_json(r));
  return out;
}

critic::preference::ScoringOptions scoring_options(const json& doc) {
  using namespace critic::preference;
  ScoringOptions o;
  o.seed = doc.value("seed", o.seed);
  if (doc.contains("mode")) o.mode = verdict_to_score_from_string(doc.at("mode").get<std::string>());
  if (doc.contains("numeric_scale")) {
    o.numeric_scale = {doc.at("numeric_scale").at("min").get<double>(),
                       doc.at("numeric_scale").at("max").get<double>()};
  }
  if (doc.contains("judge")) {
    const auto& j = doc.at("judge");
    o.judge.temperature = j.value("temperature", o.judge.temperature);
    o.judge.top_p = j.value("top_p", o.judge.top_p);
    o.judge.max_tokens = j.value("max_tokens", o.judge.max_tokens);
  }
  o.strict = doc.value("strict", o.strict);
  o.parallelism = doc.value("parallelism", o.parallelism);
  return o;
}

ordered_json matrix_json(const critic::preference::PairScoreMatrix& m) {
  ordered_json cells = ordered_json::array();
  for (int i = 0; i < m.k(); ++i) {
    ordered_json row = ordered_json::array();
    for (int j = 0; j < m.k(); ++j) {
      if (i == j || !m.provenance(i, j).valid) row.push_back(nullptr);
      else row.push_back(m.at(i, j));
    }
    cells.push_back(std::move(row));
  }
  ordered_json templates = ordered_json::array();
  for (int i = 0; i < m.k(); ++i) {
    ordered_json row = ordered_json::array();
    for (int j = 0; j < m.k(); ++j) {
      row.push_back(i == j ? ordered_json(nullptr) : ordered_json(m.provenance(i, j).template_id));
    }
    templates.push_back(std::move(row));
  }
  return {{"task_id", m.task_id()}, {"k", m.k()}, {"cells", cells}, {"templates", templates},
          {"invalid_cells", m.invalid_cells()}};
}

ordered_json labeled_to_json(const critic::curation::LabeledPair& p) {
  return {{"task", critic::io::to_json(p.task)},
          {"first", critic::io::to_json(p.first)},
          {"second", critic::io::to_json(p.second)},
          {"preference", critic::curation::to_string(p.preference)},
          {"provenance", p.provenance}};
}

critic::curation::LabeledPair labeled_from_json(const json& doc) {
  critic::curation::LabeledPair p;
  p.task = critic::io::task_from_json(doc.at("task"));
  p.first = critic::io::response_from_json(doc.at("first"));
  p.second = critic::io::response_from_json(doc.at("second"));
  p.preference = critic::curation::preference_from_string(doc.at("preference").get<std::string>());
  p.provenance = doc.value("provenance", std::string{});
  return p;
}

ordered_json build_stats_json(const critic::curation::BuildStats& s) {
  return {{"emitted", s.emitted},
          {"skipped_routing", s.skipped_routing},
          {"parse_failures", s.parse_failures},
          {"backend_failures", s.backend_failures}};
}

critic_client* make_client(std::shared_ptr<critic::backend::ChatBackend> backend, const json& spec) {
  auto config = critic::backend::BackendConfig::from_json(spec);
  if (spec.contains("fault_injection")) {
    const auto& f = spec.at("fault_injection");
    backend = std::make_shared<critic::backend::FaultInjectingBackend>(
        std::move(backend), f.value("rate", 0.0), f.value("seed", std::uint64_t{0}));
  }
  auto handle = std::make_unique<critic_client>();
  handle->backend = backend;
  handle->client = std::make_unique<critic::backend::Client>(std::move(backend), std::move(config));
  return handle.release();
}

}  // namespace

extern "C" {

const char* critic_last_error(void) { return g_last_error.c_str(); }

const char* critic_status_name(critic_status status) {
  return critic::error_code_name(static_cast<critic::ErrorCode>(status)).data();
}

const char* critic_version(void) { return "0.1.0"; }

void critic_string_free(char* s) { std::free(s); }

// ---------------------------------------------------------------------------
// Pools

critic_status critic_pool_default_pairwise(critic_pool** out) {
  return guarded([&] {
    require(out, "out");
    *out = new critic_pool{critic::prompt::default_pairwise_pool()};
  });
}

critic_status critic_pool_pointwise_presets(critic_pool** out) {
  return guarded([&] {
    require(out, "out");
    *out = new critic_pool{critic::prompt::pointwise_presets()};
  });
}

critic_status critic_pool_load(const char* path, critic_pool** out) {
  return guarded([&] {
    require(path && out, "path and out");
    *out = new critic_pool{critic::prompt::TemplatePool::load(path)};
  });
}

critic_status critic_pool_from_json(const char* text, critic_pool** out) {
  return guarded([&] {
    require(out, "out");
    *out = new critic_pool{critic::prompt::TemplatePool::from_json(parse(text, "pool json"))};
  });
}

void critic_pool_free(critic_pool* pool) { delete pool; }

size_t critic_pool_size(const critic_pool* pool) { return pool ? pool->pool.size() : 0; }

critic_status critic_pool_to_json(const critic_pool* pool, char** out) {
  return guarded([&] {
    require(pool && out, "pool and out");
    put(out, pool->pool.to_json().dump(2));
  });
}

critic_status critic_pool_assign(const critic_pool* pool, uint64_t seed, uint64_t index,
                                 char** template_id) {
  return guarded([&] {
    require(pool && template_id, "pool and template_id");
    put(template_id, critic::prompt::assign_template(pool->pool, seed, index).template_id);
  });
}

critic_status critic_render_pointwise(const critic_pool* pool, const char* template_id,
                                      const char* task_json, const char* response_json, char** out) {
  return guarded([&] {
    require(pool && template_id && out, "pool, template_id and out");
    const auto task = critic::io::task_from_json(parse(task_json, "task json"));
    const auto response = critic::io::response_from_json(parse(response_json, "response json"));
    put(out, critic::prompt::render_pointwise(task, response, pool->pool.at(template_id)));
  });
}

critic_status critic_render_pairwise(const critic_pool* pool, const char* template_id,
                                     const char* task_json, const char* response_a_json,
                                     const char* response_b_json, char** out) {
  return guarded([&] {
    require(pool && template_id && out, "pool, template_id and out");
    const auto task = critic::io::task_from_json(parse(task_json, "task json"));
    const auto a = critic::io::response_from_json(parse(response_a_json, "response A json"));
    const auto b = critic::io::response_from_json(parse(response_b_json, "response B json"));
    put(out, critic::prompt::render_pairwise(task, a, b, pool->pool.at(template_id)));
  });
}

// ---------------------------------------------------------------------------
// Parsing

critic_status critic_parse_pointwise(const char* raw, double scale_min, double scale_max, double* score,
                                     char** reason) {
  return guarded([&] {
    require(raw && score, "raw and score");
    const auto j = critic::verdict::parse_pointwise(raw, {scale_min, scale_max});
    *score = j.score;
    put(reason, j.reason);
  });
}

critic_status critic_parse_dual_score(const char* raw, double scale_min, double scale_max,
                                      double* reference_score, double* candidate_score, char** reason) {
  return guarded([&] {
    require(raw && reference_score && candidate_score, "raw and score outputs");
    const auto j = critic::verdict::parse_dual_score(raw, {scale_min, scale_max});
    *reference_score = j.reference_score;
    *candidate_score = j.candidate_score;
    put(reason, j.reason);
  });
}

critic_status critic_parse_pairwise(const char* raw, const char* lexicon_json, critic_verdict* verdict,
                                    char** reason) {
  return guarded([&] {
    require(raw && verdict, "raw and verdict");
    critic::verdict::PairwiseVerdict v;
    if (lexicon_json) {
      const auto lexicon = critic::verdict::PairwiseLexicon::from_json(parse(lexicon_json, "lexicon"));
      v = critic::verdict::parse_pairwise(raw, lexicon);
    } else {
      v = critic::verdict::parse_pairwise(raw);
    }
    *verdict = static_cast<critic_verdict>(v.verdict);
    put(reason, v.reason);
  });
}

// ---------------------------------------------------------------------------
// Metrics

critic_status critic_pearson(const double* xs, const double* ys, size_t n, double* out) {
  return guarded([&] {
    require((xs && ys) || n == 0, "xs and ys");
    require(out, "out");
    *out = critic::metrics::pearson({xs, n}, {ys, n});
  });
}

critic_status critic_kendall_tau_b(const double* xs, const double* ys, size_t n, double* out) {
  return guarded([&] {
    require((xs && ys) || n == 0, "xs and ys");
    require(out, "out");
    *out = critic::metrics::kendall_tau_b({xs, n}, {ys, n});
  });
}

critic_status critic_pairwise_accuracy(const critic_verdict* predicted, const critic_verdict* gold,
                                       size_t n, int with_tie, double* out) {
  return guarded([&] {
    require((predicted && gold) || n == 0, "predicted and gold");
    require(out, "out");
    std::vector<critic::Verdict> p, g;
    for (size_t i = 0; i < n; ++i) {
      if (predicted[i] < CRITIC_VERDICT_A || predicted[i] > CRITIC_VERDICT_TIE ||
          gold[i] < CRITIC_VERDICT_A || gold[i] > CRITIC_VERDICT_TIE) {
        critic::fail(critic::ErrorCode::kInvalidArgument, "verdict value out of range");
      }
      p.push_back(static_cast<critic::Verdict>(predicted[i]));
      g.push_back(static_cast<critic::Verdict>(gold[i]));
    }
    *out = critic::metrics::pairwise_accuracy(p, g, with_tie != 0);
  });
}

critic_status critic_elo(const char* battles_json, double initial_rating, double k_factor,
                         int permutations, uint64_t seed, char** ratings_json) {
  return guarded([&] {
    require(ratings_json, "ratings_json");
    std::vector<critic::metrics::Battle> battles;
    for (const auto& b : parse(battles_json, "battles json")) {
      battles.push_back({b.value("task_id", std::string{}), b.at("model_a").get<std::string>(),
                         b.at("model_b").get<std::string>(),
                         critic::verdict_from_string(b.at("outcome").get<std::string>())});
    }
    const auto ratings =
        critic::metrics::elo_ratings(battles, {initial_rating, k_factor, permutations, seed});
    put(ratings_json, ordered_json(ratings).dump());
  });
}

critic_status critic_agreement_report(const char* scores_path, const char* battles_path,
                                      int permutations, uint64_t seed, char** report_json,
                                      char** table) {
  return guarded([&] {
    require(scores_path, "scores_path");
    std::vector<critic::metrics::BenchmarkScore> scores;
    for (const auto& d : critic::io::read_jsonl(scores_path)) {
      scores.push_back({d.value("benchmark", std::string("default")),
                        {d.value("task_id", std::string{}), d.at("producer_model").get<std::string>(),
                         d.at("score_by_eval_a").get<double>(), d.at("score_by_eval_b").get<double>()}});
    }
    std::vector<critic::metrics::JudgedBattle> battles;
    if (battles_path) {
      for (const auto& d : critic::io::read_jsonl(battles_path)) {
        battles.push_back({d.value("benchmark", std::string("default")),
                           {d.value("task_id", std::string{}), d.at("model_a").get<std::string>(),
                            d.at("model_b").get<std::string>(),
                            critic::verdict_from_string(d.at("gold").get<std::string>())},
                           critic::verdict_from_string(d.at("predicted").get<std::string>())});
      }
    }
    critic::metrics::EloConfig elo;
    elo.permutations = permutations;
    elo.seed = seed;
    const auto report = critic::metrics::agreement_report(scores, battles, elo);
    put(report_json, report.document.dump(2));
    put(table, report.table);
  });
}

// ---------------------------------------------------------------------------
// Backends

critic_status critic_client_open(const char* spec_json, critic_client** out) {
  return guarded([&] {
    require(out, "out");
    const auto spec = parse(spec_json, "backend spec");
    const auto config = critic::backend::BackendConfig::from_json(spec);
    *out = make_client(critic::backend::make_backend(spec, config), spec);
  });
}

critic_status critic_client_open_callback(const char* config_json, critic_complete_fn fn, void* user,
                                          critic_client** out) {
  return guarded([&] {
    require(fn && out, "fn and out");
    const auto spec = parse(config_json, "backend config");
    const auto endpoint = spec.value("endpoint_url", std::string("callback://judge"));
    auto backend = std::make_shared<critic::backend::CallbackBackend>(
        endpoint, [fn, user](const critic::backend::ChatRequest& request) {
          const auto text = critic::backend::to_json(request).dump();
          const char* reply = nullptr;
          const int rc = fn(user, text.c_str(), &reply);
          if (rc != 0) {
            const auto code = rc > 0 && rc <= CRITIC_INTERNAL ? static_cast<critic::ErrorCode>(rc)
                                                              : critic::ErrorCode::kTransportError;
            critic::fail(code, "callback backend returned " + std::to_string(rc));
          }
          if (!reply) critic::fail(critic::ErrorCode::kTransportError, "callback backend returned no reply");
          return std::string(reply);
        });
    *out = make_client(std::move(backend), spec);
  });
}

void critic_client_free(critic_client* client) { delete client; }

critic_status critic_client_complete(critic_client* client, const char* request_json, char** reply) {
  return guarded([&] {
    require(client && reply, "client and reply");
    const auto request = critic::backend::request_from_json(parse(request_json, "request json"));
    put(reply, client->client->complete(request));
  });
}

critic_status critic_client_stats(const critic_client* client, char** stats_json) {
  return guarded([&] {
    require(client && stats_json, "client and stats_json");
    const auto s = client->client->stats();
    const ordered_json doc = {{"requests", s.requests},         {"cache_hits", s.cache_hits},
                              {"cache_misses", s.cache_misses}, {"backend_calls", s.backend_calls},
                              {"retries", s.retries},           {"peak_in_flight", s.peak_in_flight}};
    put(stats_json, doc.dump());
  });
}

critic_status critic_request_hash(const char* endpoint_url, const char* request_json, char** hash) {
  return guarded([&] {
    require(endpoint_url && hash, "endpoint_url and hash");
    const auto request = critic::backend::request_from_json(parse(request_json, "request json"));
    put(hash, critic::backend::request_hash(endpoint_url, request));
  });
}

// ---------------------------------------------------------------------------
// Preference engine

critic_status critic_score_task(const char* task_json, const char* responses_json, critic_client* judge,
                                const critic_pool* pool, const char* options_json, char** result_json) {
  return guarded([&] {
    require(judge && pool && result_json, "judge, pool and result_json");
    const auto task = critic::io::task_from_json(parse(task_json, "task json"));
    const auto responses = responses_from(parse(responses_json, "responses json"));
    const auto options = options_json ? scoring_options(parse(options_json, "options json"))
                                      : critic::preference::ScoringOptions{};
    const auto m = critic::preference::score_ordered_pairs(task, responses, *judge->client, pool->pool,
                                                           options);
    ordered_json doc;
    doc["matrix"] = matrix_json(m);
    if (m.complete()) {
      const auto rewarded = critic::preference::aggregate_rewards(m, responses);
      ordered_json rewards = ordered_json::array();
      for (const auto& r : rewarded) rewards.push_back({{"response_id", r.response.response_id}, {"reward", r.reward}});
      doc["rewards"] = rewards;
      const auto pair = critic::preference::select_preference_pair(task, rewarded, 0);
      doc["pair"] = pair ? critic::preference::to_json(*pair) : ordered_json(nullptr);
    } else {
      doc["rewards"] = nullptr;
      doc["pair"] = nullptr;
    }
    put(result_json, doc.dump());
  });
}

critic_status critic_best_of_n(const char* task_json, const char* responses_json, critic_client* judge,
                               const critic_pool* pool, const char* options_json, char** best_json) {
  return guarded([&] {
    require(judge && pool && best_json, "judge, pool and best_json");
    const auto task = critic::io::task_from_json(parse(task_json, "task json"));
    const auto responses = responses_from(parse(responses_json, "responses json"));
    const auto options = options_json ? scoring_options(parse(options_json, "options json"))
                                      : critic::preference::ScoringOptions{};
    const auto best = critic::preference::best_of_n(task, responses, *judge->client, pool->pool, options);
    put(best_json, critic::io::to_json(best).dump());
  });
}

critic_status critic_run_round(const char* tasks_path, critic_client* generator, critic_client* judge,
                               const critic_pool* pool, const char* loop_config_json, int round_index,
                               const char* out_dir, const char* parent_run_id, char** manifest_json) {
  return guarded([&] {
    require(tasks_path && generator && judge && pool && out_dir, "tasks_path, clients, pool and out_dir");
    const auto tasks = critic::io::load_tasks(tasks_path);
    const auto config = loop_config_json
                            ? critic::preference::LoopConfig::from_json(parse(loop_config_json, "loop config"))
                            : critic::preference::LoopConfig{};
    std::optional<std::string> parent;
    if (parent_run_id) parent = parent_run_id;
    const auto result = critic::preference::run_round(tasks, *generator->client, *judge->client, pool->pool,
                                                      config, round_index, out_dir, parent);
    put(manifest_json, result.manifest.dump(2));
  });
}

critic_status critic_run_iterative(const char* tasks_path, critic_client* const* generators,
                                   size_t generator_count, critic_client* judge, const critic_pool* pool,
                                   const char* loop_config_json, const char* out_dir,
                                   char** manifests_json) {
  std::vector<critic::backend::Client*> clients;
  ordered_json manifests = ordered_json::array();
  const auto status = guarded([&] {
    require(tasks_path && judge && pool && out_dir, "tasks_path, judge, pool and out_dir");
    require(generators || generator_count == 0, "generators");
    const auto tasks = critic::io::load_tasks(tasks_path);
    const auto config = loop_config_json
                            ? critic::preference::LoopConfig::from_json(parse(loop_config_json, "loop config"))
                            : critic::preference::LoopConfig{};
    for (size_t i = 0; i < generator_count; ++i) {
      clients.push_back(generators[i] ? generators[i]->client.get() : nullptr);
    }
    // Completed rounds survive a halt, so read their manifests from disk.
    std::exception_ptr halted;
    try {
      critic::preference::run_iterative(tasks, clients, *judge->client, pool->pool, config, out_dir);
    } catch (const critic::Error& e) {
      if (e.code() != critic::ErrorCode::kHaltBetweenRounds) throw;
      halted = std::current_exception();
    }
    for (int r = 1; r <= config.rounds; ++r) {
      const auto path = std::filesystem::path(out_dir) / ("round_" + std::to_string(r) + ".manifest.json");
      if (!std::filesystem::exists(path)) break;
      manifests.push_back(ordered_json::parse(critic::io::read_text(path)));
    }
    if (halted) std::rethrow_exception(halted);
  });
  if (status == CRITIC_OK && !manifests_json) {
    g_last_error = "manifests_json must not be NULL";
    return CRITIC_INVALID_ARGUMENT;
  }
  if (manifests_json && (status == CRITIC_OK || status == CRITIC_HALT_BETWEEN_ROUNDS)) {
    *manifests_json = dup(manifests.dump(2));
  }
  return status;
}

// ---------------------------------------------------------------------------
// Curation

critic_status critic_curate_pointwise(const char* tasks_path, const char* responses_path,
                                      const critic_pool* presets, critic_client* judge, const char* out_path,
                                      char** stats_json) {
  return guarded([&] {
    require(tasks_path && responses_path && presets && judge && out_path, "paths, presets and judge");
    const auto tasks = critic::io::load_tasks(tasks_path);
    std::vector<critic::CandidateResponse> responses;
    for (const auto& d : critic::io::read_jsonl(responses_path)) {
      responses.push_back(critic::io::response_from_json(d));
    }
    const auto build = critic::curation::build_pointwise(tasks, responses, presets->pool, *judge->client);
    critic::curation::write_records(out_path, std::span<const critic::curation::PointwiseRecord>(build.records));
    put(stats_json, build_stats_json(build.stats).dump());
  });
}

critic_status critic_select_pairs(const char* scored_pairs_path, const char* selection_json,
                                  char** labeled_json) {
  return guarded([&] {
    require(scored_pairs_path && labeled_json, "scored_pairs_path and labeled_json");
    const auto pairs = critic::curation::load_scored_pairs(scored_pairs_path);
    const auto sel = selection_json ? parse(selection_json, "selection json") : json::object();
    std::vector<critic::curation::LabeledPair> selected;
    if (sel.value("labeled", false)) {
      selected = critic::curation::labeled_from_input(pairs);
    } else {
      if (sel.contains("gap_threshold")) {
        selected = critic::curation::filter_by_score_gap(pairs, sel.at("gap_threshold").get<double>());
      }
      if (sel.contains("tie_count")) {
        auto ties = critic::curation::sample_ties(pairs, sel.at("tie_count").get<std::size_t>(),
                                                  sel.value("tie_seed", std::uint64_t{0}));
        selected.insert(selected.end(), ties.begin(), ties.end());
      }
    }
    ordered_json doc = ordered_json::array();
    for (const auto& p : selected) doc.push_back(labeled_to_json(p));
    put(labeled_json, doc.dump());
  });
}

critic_status critic_curate_pairwise(const char* labeled_json, const critic_pool* pool,
                                     critic_client* reason_judge, uint64_t seed, const char* reason_prompt,
                                     const char* out_path, char** stats_json) {
  return guarded([&] {
    require(pool && reason_judge && out_path, "pool, reason_judge and out_path");
    std::vector<critic::curation::LabeledPair> pairs;
    for (const auto& d : parse(labeled_json, "labeled pairs json")) pairs.push_back(labeled_from_json(d));
    const auto prompt_text = reason_prompt ? std::string(reason_prompt) : critic::curation::default_reason_prompt();
    const auto build =
        critic::curation::build_pairwise(pairs, pool->pool, *reason_judge->client, seed, prompt_text);
    critic::curation::write_records(out_path, std::span<const critic::curation::PairwiseRecord>(build.records));
    put(stats_json, build_stats_json(build.stats).dump());
  });
}

}  // extern "C"
