#ifndef CRITIC_CRITIC_H_
#define CRITIC_CRITIC_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CRITIC_API __declspec(dllexport)
#else
#define CRITIC_API __attribute__((visibility("default")))
#endif

/* Status codes. Values are stable across releases. */
typedef enum critic_status {
  CRITIC_OK = 0,
  CRITIC_INVALID_ARGUMENT = 1,
  CRITIC_MISSING_REFERENCE = 2,
  CRITIC_UNKNOWN_PLACEHOLDER = 3,
  CRITIC_TASK_MISMATCH = 4,
  CRITIC_EMPTY_POOL = 5,
  CRITIC_DUPLICATE_TEMPLATE = 6,
  CRITIC_NO_SCORE_FOUND = 7,
  CRITIC_SCORE_OUT_OF_RANGE = 8,
  CRITIC_MALFORMED_DUAL_SCORE = 9,
  CRITIC_AMBIGUOUS_VERDICT = 10,
  CRITIC_TRANSPORT_ERROR = 11,
  CRITIC_AUTH_ERROR = 12,
  CRITIC_SCRIPT_MISS = 13,
  CRITIC_PARTIAL_GENERATION = 14,
  CRITIC_DEGENERATE_INPUT = 15,
  CRITIC_INCOMPLETE_MATRIX = 16,
  CRITIC_HALT_BETWEEN_ROUNDS = 17,
  CRITIC_DIMENSION_MISMATCH = 18,
  CRITIC_INSUFFICIENT_TIES = 19,
  CRITIC_IO_ERROR = 20,
  CRITIC_PARSE_ERROR = 21,
  CRITIC_INTERNAL = 22
} critic_status;

typedef enum critic_verdict {
  CRITIC_VERDICT_A = 0,
  CRITIC_VERDICT_B = 1,
  CRITIC_VERDICT_TIE = 2
} critic_verdict;

typedef struct critic_pool critic_pool;
typedef struct critic_client critic_client;

/* Message for the last failed call on this thread; "" after a success. */
CRITIC_API const char* critic_last_error(void);
CRITIC_API const char* critic_status_name(critic_status status);
CRITIC_API const char* critic_version(void);

/* Every char** out-parameter receives a string owned by the caller. */
CRITIC_API void critic_string_free(char* s);

/* Template pools */

CRITIC_API critic_status critic_pool_default_pairwise(critic_pool** out);
CRITIC_API critic_status critic_pool_pointwise_presets(critic_pool** out);
CRITIC_API critic_status critic_pool_load(const char* path, critic_pool** out);
CRITIC_API critic_status critic_pool_from_json(const char* json, critic_pool** out);
CRITIC_API void critic_pool_free(critic_pool* pool);
CRITIC_API size_t critic_pool_size(const critic_pool* pool);
CRITIC_API critic_status critic_pool_to_json(const critic_pool* pool, char** out);
CRITIC_API critic_status critic_pool_assign(const critic_pool* pool, uint64_t seed, uint64_t index,
                                            char** template_id);

/* task_json: {task_id, question, image_ref, reference_answer?, source?}
   response_json: {response_id, task_id, producer_model, text} */
CRITIC_API critic_status critic_render_pointwise(const critic_pool* pool, const char* template_id,
                                                 const char* task_json, const char* response_json,
                                                 char** out);
CRITIC_API critic_status critic_render_pairwise(const critic_pool* pool, const char* template_id,
                                                const char* task_json, const char* response_a_json,
                                                const char* response_b_json, char** out);

/* Verdict parsing. reason may be NULL. */

CRITIC_API critic_status critic_parse_pointwise(const char* raw, double scale_min, double scale_max,
                                                double* score, char** reason);
CRITIC_API critic_status critic_parse_dual_score(const char* raw, double scale_min, double scale_max,
                                                 double* reference_score, double* candidate_score,
                                                 char** reason);
/* lexicon_json may be NULL for the default phrase lists. */
CRITIC_API critic_status critic_parse_pairwise(const char* raw, const char* lexicon_json,
                                               critic_verdict* verdict, char** reason);

/* Metrics */

CRITIC_API critic_status critic_pearson(const double* xs, const double* ys, size_t n, double* out);
CRITIC_API critic_status critic_kendall_tau_b(const double* xs, const double* ys, size_t n, double* out);
CRITIC_API critic_status critic_pairwise_accuracy(const critic_verdict* predicted,
                                                  const critic_verdict* gold, size_t n, int with_tie,
                                                  double* out);
/* battles_json: [{task_id, model_a, model_b, outcome: "A"|"B"|"Tie"}]. *ratings_json
   receives {model: mean rating}. */
CRITIC_API critic_status critic_elo(const char* battles_json, double initial_rating, double k_factor,
                                    int permutations, uint64_t seed, char** ratings_json);
/* scores_path: JSONL {benchmark, task_id, producer_model, score_by_eval_a, score_by_eval_b}.
   battles_path: JSONL {benchmark, task_id, model_a, model_b, gold, predicted}; may be NULL.
   Either output may be NULL. */
CRITIC_API critic_status critic_agreement_report(const char* scores_path, const char* battles_path,
                                                 int permutations, uint64_t seed, char** report_json,
                                                 char** table);

/* Backends */

/* spec_json: BackendConfig fields plus "type": "http" | "mock"; mock specs add
   "script": {request_hash: reply}; optional "fault_injection": {rate, seed}. */
CRITIC_API critic_status critic_client_open(const char* spec_json, critic_client** out);

/* Returns 0 and sets *reply, or returns a critic_status. *reply is copied
   before the callback's next invocation. */
typedef int (*critic_complete_fn)(void* user, const char* request_json, const char** reply);

CRITIC_API critic_status critic_client_open_callback(const char* config_json, critic_complete_fn fn,
                                                     void* user, critic_client** out);
CRITIC_API void critic_client_free(critic_client* client);
/* request_json: {model, messages, temperature, top_p, max_tokens, seed?} */
CRITIC_API critic_status critic_client_complete(critic_client* client, const char* request_json,
                                                char** reply);
CRITIC_API critic_status critic_client_stats(const critic_client* client, char** stats_json);
CRITIC_API critic_status critic_request_hash(const char* endpoint_url, const char* request_json,
                                             char** hash);

/* Preference engine */

/* options_json: {seed, mode: "categorical"|"numeric", numeric_scale:{min,max},
   judge:{temperature, top_p, max_tokens}, strict, parallelism}.
   *result_json receives {matrix, rewards, pair|null}. */
CRITIC_API critic_status critic_score_task(const char* task_json, const char* responses_json,
                                           critic_client* judge, const critic_pool* pool,
                                           const char* options_json, char** result_json);
CRITIC_API critic_status critic_best_of_n(const char* task_json, const char* responses_json,
                                          critic_client* judge, const critic_pool* pool,
                                          const char* options_json, char** best_json);
/* parent_run_id may be NULL. *manifest_json receives the round manifest. */
CRITIC_API critic_status critic_run_round(const char* tasks_path, critic_client* generator,
                                          critic_client* judge, const critic_pool* pool,
                                          const char* loop_config_json, int round_index,
                                          const char* out_dir, const char* parent_run_id,
                                          char** manifest_json);
/* generators[r] serves round r; a NULL entry halts before that round. On
   CRITIC_HALT_BETWEEN_ROUNDS the completed rounds' manifests are still returned. */
CRITIC_API critic_status critic_run_iterative(const char* tasks_path, critic_client* const* generators,
                                              size_t generator_count, critic_client* judge,
                                              const critic_pool* pool, const char* loop_config_json,
                                              const char* out_dir, char** manifests_json);

/* Curation */

/* responses_path: JSONL candidate responses matched to tasks by task_id. */
CRITIC_API critic_status critic_curate_pointwise(const char* tasks_path, const char* responses_path,
                                                 const critic_pool* presets, critic_client* judge,
                                                 const char* out_path, char** stats_json);
/* selection_json: {gap_threshold?, tie_count?, tie_seed?, labeled?}. Gap-filtered
   pairs come first, then sampled ties; "labeled": true uses the input labels.
   *labeled_json receives the selected pairs. */
CRITIC_API critic_status critic_select_pairs(const char* scored_pairs_path, const char* selection_json,
                                             char** labeled_json);
/* labeled_json as produced by critic_select_pairs. reason_prompt may be NULL. */
CRITIC_API critic_status critic_curate_pairwise(const char* labeled_json, const critic_pool* pool,
                                                critic_client* reason_judge, uint64_t seed,
                                                const char* reason_prompt, const char* out_path,
                                                char** stats_json);

#ifdef __cplusplus
}
#endif

#endif  // CRITIC_CRITIC_H_
