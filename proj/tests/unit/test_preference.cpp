#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "critic/io.hpp"
#include "critic/preference.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace critic;
using namespace critic::preference;
using namespace testsupport;

namespace {

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

std::vector<CandidateResponse> tagged(const EvalTask& task, const std::vector<double>& q) {
  std::vector<CandidateResponse> out;
  for (std::size_t i = 0; i < q.size(); ++i) {
    out.push_back(make_response(task, static_cast<int>(i), "Answer " + std::to_string(i) + " " + quality_tag(q[i])));
  }
  return out;
}

PairScoreMatrix filled(const std::vector<std::vector<double>>& a) {
  PairScoreMatrix m("t", static_cast<int>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (i != j) m.set(static_cast<int>(i), static_cast<int>(j), a[i][j], {"tpl", "h", true, ""});
    }
  }
  return m;
}

std::vector<EvalTask> synthetic_tasks(int n) {
  std::vector<EvalTask> out;
  for (int i = 0; i < n; ++i) out.push_back(make_task("task" + std::to_string(i), "Question " + std::to_string(i) + "?"));
  return out;
}

LoopConfig small_config() {
  LoopConfig c;
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("matrix basics") {
  CHECK(code_of([] { PairScoreMatrix("t", 1); }) == ErrorCode::kInvalidArgument);
  PairScoreMatrix m("t", 3);
  CHECK_FALSE(m.complete());
  CHECK(code_of([&] { m.at(0, 0); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { m.at(0, 1); }) == ErrorCode::kIncompleteMatrix);
  CHECK(code_of([&] { aggregate_rewards(m); }) == ErrorCode::kIncompleteMatrix);
}

TEST_CASE("two responses, judge prefers the second in both orders") {
  const auto task = make_task("t");
  const auto rs = tagged(task, {0.2, 0.8});
  auto judge = callback_client(quality_judge(), "mock://judge");
  const auto m = score_ordered_pairs(task, rs, *judge, prompt::default_pairwise_pool(), {});
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(1, 0) == -1);
  const auto r = aggregate_rewards(m);
  CHECK(r == std::vector<double>{-2, 2});
  CHECK(judge->stats().requests == 2);
}

TEST_CASE("three responses under a strict order y3 > y1 > y2") {
  const auto task = make_task("t");
  const auto rs = tagged(task, {0.5, 0.1, 0.9});
  auto judge = callback_client(quality_judge(), "mock://judge");
  const auto m = score_ordered_pairs(task, rs, *judge, prompt::default_pairwise_pool(), {});
  const std::vector<double> q = {0.5, 0.1, 0.9};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i != j) CHECK(m.at(i, j) == (q[j] > q[i] ? 1 : -1));
    }
  }
}

TEST_CASE("tie judge gives a zero matrix and a skip") {
  const auto task = make_task("t");
  const auto rs = tagged(task, {0.2, 0.8});
  auto judge = callback_client([](const backend::ChatRequest&) { return std::string(kTieReply); }, "mock://judge");
  const auto m = score_ordered_pairs(task, rs, *judge, prompt::default_pairwise_pool(), {});
  CHECK(m.at(0, 1) == 0);
  CHECK(m.at(1, 0) == 0);
  const auto rewarded = aggregate_rewards(m, rs);
  CHECK_FALSE(select_preference_pair(task, rewarded, 0).has_value());
}

TEST_CASE("reward aggregation matches the double-loop oracle") {
  rng::SplitMix gen(8);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(gen.below(5));
    std::vector<std::vector<double>> a(k, std::vector<double>(k, 0));
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        if (i != j) a[i][j] = static_cast<double>(gen.below(3)) - 1.0;
      }
    }
    const auto r = aggregate_rewards(filled(a));
    CHECK(r == oracle::rewards(a));
    CHECK(std::accumulate(r.begin(), r.end(), 0.0) == 0.0);
  }
}

TEST_CASE("pair selection and tie-breaks") {
  const auto task = make_task("t");
  auto rewarded = [&](std::vector<double> r) {
    std::vector<RewardedResponse> out;
    for (std::size_t i = 0; i < r.size(); ++i) out.push_back({make_response(task, static_cast<int>(i), "x"), r[i]});
    return out;
  };
  const auto p = select_preference_pair(task, rewarded({2, -2}), 1);
  REQUIRE(p.has_value());
  CHECK(p->chosen.response_id == "t#0");
  CHECK(p->rejected.response_id == "t#1");
  CHECK(p->round == 1);
  CHECK_FALSE(select_preference_pair(task, rewarded({0, 0, 0, 0, 0}), 0).has_value());
  const auto q = select_preference_pair(task, rewarded({4, 4, -8}), 0);
  REQUIRE(q.has_value());
  CHECK(q->chosen.response_id == "t#0");
  CHECK(q->rejected.response_id == "t#2");
  CHECK(q->chosen_reward > q->rejected_reward);
}

TEST_CASE("best of n") {
  const auto task = make_task("t");
  const auto pool = prompt::default_pairwise_pool();
  auto judge = callback_client(quality_judge(), "mock://judge");
  const auto single = tagged(task, {0.3});
  CHECK(best_of_n(task, single, *judge, pool, {}) == single[0]);
  CHECK(judge->stats().requests == 0);
  const auto five = tagged(task, {0.3, 0.7, 0.95, 0.1, 0.5});
  CHECK(best_of_n(task, five, *judge, pool, {}).response_id == "t#2");
  auto ties = callback_client([](const backend::ChatRequest&) { return std::string(kTieReply); }, "mock://tie");
  CHECK(best_of_n(task, five, *ties, pool, {}).response_id == "t#0");
}

TEST_CASE("position-biased judge is neutralized") {
  const auto task = make_task("t");
  const auto rs = tagged(task, {0.1, 0.4, 0.9, 0.6, 0.2});
  auto judge = callback_client([](const backend::ChatRequest&) { return std::string(kPreferB); }, "mock://biased");
  const auto m = score_ordered_pairs(task, rs, *judge, prompt::default_pairwise_pool(), {});
  const auto r = aggregate_rewards(m);
  CHECK(r == std::vector<double>(5, 0.0));
  CHECK_FALSE(select_preference_pair(task, aggregate_rewards(m, rs), 0).has_value());
}

TEST_CASE("numeric mode and unparseable cells") {
  const auto task = make_task("t");
  const auto rs = tagged(task, {0.25, 0.75});
  auto numeric = callback_client(
      [](const backend::ChatRequest& r) {
        const auto q = qualities_in(request_text(r));
        char buf[64];
        std::snprintf(buf, sizeof buf, "Relative quality of B. Final Score: %.2f", q[1] - q[0]);
        return std::string(buf);
      },
      "mock://numeric");
  ScoringOptions opts;
  opts.mode = VerdictToScore::kNumeric;
  const auto m = score_ordered_pairs(task, rs, *numeric, prompt::default_pairwise_pool(), opts);
  CHECK(m.at(0, 1) == 0.5);
  CHECK(m.at(1, 0) == -0.5);

  auto garbled = callback_client([](const backend::ChatRequest&) { return std::string("I cannot decide."); },
                                 "mock://garbled");
  const auto bad = score_ordered_pairs(task, rs, *garbled, prompt::default_pairwise_pool(), {});
  CHECK(bad.invalid_cells() == 2);
  CHECK_FALSE(bad.provenance(0, 1).valid);
  ScoringOptions strict;
  strict.strict = true;
  CHECK(code_of([&] { score_ordered_pairs(task, rs, *garbled, prompt::default_pairwise_pool(), strict); }) ==
        ErrorCode::kAmbiguousVerdict);
}

TEST_CASE("pair request layout and cell templates") {
  const auto task = make_task("t");
  const auto rs = tagged(task, {0.1, 0.2});
  const auto pool = prompt::default_pairwise_pool();
  const auto& tpl = cell_template(pool, 3, "t", 2, 0, 1);
  CHECK(&tpl == &cell_template(pool, 3, "t", 2, 0, 1));
  const auto req = pair_request(task, rs[0], rs[1], tpl, "judge", JudgeSettings{});
  REQUIRE(req.messages.size() == 1);
  REQUIRE(req.messages[0].content.size() == 2);
  CHECK(req.messages[0].content[0].kind == backend::ContentPart::Kind::kImage);
  CHECK(req.temperature == 0.0);
  const auto q = qualities_in(request_text(req));
  CHECK(q == std::vector<double>{0.1, 0.2});
}

TEST_CASE("loop config validation and round trip") {
  LoopConfig c;
  c.skip_on_tie_collapse = false;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::kInvalidArgument);
  c = LoopConfig{};
  c.rounds = 0;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::kInvalidArgument);
  c = LoopConfig{};
  c.sampling.k = 1;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::kInvalidArgument);
  c = small_config();
  c.sampling.k = 4;
  c.verdict_to_score = VerdictToScore::kNumeric;
  const auto back = LoopConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.to_json().dump() == c.to_json().dump());
}

TEST_CASE("run_round with a consistent judge") {
  TempDir dir;
  const auto tasks = synthetic_tasks(10);
  auto gen = callback_client(quality_generator(0.2, 3.0), "mock://gen");
  auto judge = callback_client(quality_judge(), "mock://judge");
  const auto result = run_round(tasks, *gen, *judge, prompt::default_pairwise_pool(), small_config(), 0, dir.path());
  REQUIRE(result.pairs.size() == 10);
  for (const auto& p : result.pairs) {
    // Oracle: the latent order of the generated tags.
    const auto chosen_q = qualities_in(p.chosen.text).at(0);
    const auto rejected_q = qualities_in(p.rejected.text).at(0);
    CHECK(chosen_q > rejected_q);
    CHECK(p.chosen_reward == 8);
    CHECK(p.rejected_reward == -8);
  }
  CHECK(std::filesystem::exists(dir / "round_0.jsonl"));
  CHECK(result.manifest.at("counts").at("pairs") == 10);
  CHECK(result.manifest.at("counts").at("skips") == 0);
  CHECK(result.manifest.at("parent_run_id").is_null());
  const auto lines = io::read_jsonl(dir / "round_0.jsonl");
  CHECK(lines.size() == 10);
  CHECK(lines[0].contains("chosen_text"));
}

TEST_CASE("run_round with an all-tie judge") {
  TempDir dir;
  const auto tasks = synthetic_tasks(10);
  auto gen = callback_client(quality_generator(0.2, 3.0), "mock://gen");
  auto judge = callback_client([](const backend::ChatRequest&) { return std::string(kTieReply); }, "mock://tie");
  const auto result = run_round(tasks, *gen, *judge, prompt::default_pairwise_pool(), small_config(), 0, dir.path());
  CHECK(result.pairs.empty());
  CHECK(result.manifest.at("counts").at("skips") == 10);
  CHECK(io::read_text(dir / "round_0.jsonl").empty());
}

TEST_CASE("warm-cache rerun is byte-identical") {
  TempDir dir;
  const auto tasks = synthetic_tasks(6);
  auto run = [&](const std::string& out) {
    auto gen = callback_client(quality_generator(0.2, 3.0), "mock://gen", 2, dir / "cache");
    auto judge = callback_client(quality_judge(0.1), "mock://judge", 2, dir / "cache");
    run_round(tasks, *gen, *judge, prompt::default_pairwise_pool(), small_config(), 0, dir / out);
    return std::make_pair(gen->stats().backend_calls, judge->stats().backend_calls);
  };
  const auto cold = run("a");
  const auto warm = run("b");
  CHECK(cold.first == 30);
  CHECK(cold.second == 120);
  CHECK(warm.first == 0);
  CHECK(warm.second == 0);
  CHECK(io::read_text(dir / "a" / "round_0.jsonl") == io::read_text(dir / "b" / "round_0.jsonl"));
}

TEST_CASE("run_iterative: single round, chaining, halt") {
  TempDir dir;
  const auto tasks = synthetic_tasks(4);
  const auto pool = prompt::default_pairwise_pool();
  auto judge = callback_client(quality_judge(), "mock://judge");
  auto g0 = callback_client(quality_generator(0.2, 1.0), "mock://gen0");
  auto g1 = callback_client(quality_generator(0.4, 1.0), "mock://gen1");

  auto one = small_config();
  one.rounds = 1;
  std::vector<backend::Client*> gens1 = {g0.get()};
  const auto it = run_iterative(tasks, gens1, *judge, pool, one, dir / "iter");
  const auto single = run_round(tasks, *g0, *judge, pool, one, 1, dir / "single");
  REQUIRE(it.size() == 1);
  CHECK(io::read_text(dir / "iter" / "round_1.jsonl") == io::read_text(dir / "single" / "round_1.jsonl"));
  CHECK(io::read_text(dir / "iter" / "round_1.manifest.json") ==
        io::read_text(dir / "single" / "round_1.manifest.json"));

  auto two = small_config();
  two.rounds = 2;
  std::vector<backend::Client*> both = {g0.get(), g1.get()};
  const auto chained = run_iterative(tasks, both, *judge, pool, two, dir / "chain");
  REQUIRE(chained.size() == 2);
  CHECK(chained[1].manifest.at("parent_run_id") == chained[0].run_id);

  std::vector<backend::Client*> missing = {g0.get(), nullptr};
  CHECK(code_of([&] { run_iterative(tasks, missing, *judge, pool, two, dir / "halt"); }) ==
        ErrorCode::kHaltBetweenRounds);
  CHECK(std::filesystem::exists(dir / "halt" / "round_1.jsonl"));
  CHECK(std::filesystem::exists(dir / "halt" / "round_1.manifest.json"));
  CHECK_FALSE(std::filesystem::exists(dir / "halt" / "round_2.jsonl"));
  std::vector<backend::Client*> short_list = {g0.get()};
  CHECK(code_of([&] { run_iterative(tasks, short_list, *judge, pool, two, dir / "short"); }) ==
        ErrorCode::kHaltBetweenRounds);
}
