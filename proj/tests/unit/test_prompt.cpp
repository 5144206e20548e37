#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <set>

#include "critic/prompt.hpp"
#include "support.hpp"

using namespace critic;
using namespace critic::prompt;
using testsupport::make_response;
using testsupport::make_task;

namespace {

PromptTemplate pointwise(std::string id, std::string body) {
  PromptTemplate t;
  t.template_id = std::move(id);
  t.setting = Setting::kPointwise;
  t.body = std::move(body);
  t.score_scale = ScoreScale{0, 100};
  t.output_format = OutputFormat::kScoreLast;
  return t;
}

PromptTemplate pairwise(std::string id, std::string body) {
  PromptTemplate t;
  t.template_id = std::move(id);
  t.setting = Setting::kPairwise;
  t.body = std::move(body);
  return t;
}

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kOk;
}

const char* kSixCars =
    "The image shows a small train on a track, with a total of six cars attached to it. The train is "
    "traveling on a small track, and there are potted plants nearby. The scene appears to be set in a "
    "park or a similar outdoor area.";
const char* kFourCars =
    "The image shows a small train with four red cars, traveling on a track. The train is located in a "
    "park setting, and there are potted plants nearby.";

}  // namespace

TEST_CASE("identity substitution") {
  const auto task = make_task("t", "Q");
  const auto r = make_response(task, 0, "R");
  CHECK(render_pointwise(task, r, pointwise("p", "{question}|{response}")) == "Q|R");
}

TEST_CASE("doubled braces are literal and values are never rescanned") {
  const auto task = make_task("t", "{response}");
  const auto r = make_response(task, 0, "{{x}} {question}");
  CHECK(render_pointwise(task, r, pointwise("p", "{{{question}}} -> {response}")) ==
        "{{response}} -> {{x}} {question}");
}

TEST_CASE("tokenizer rejects unknown names and unbalanced braces") {
  const std::vector<std::string_view> allowed = {"question"};
  CHECK(code_of([&] { tokenize("{answer}", allowed); }) == ErrorCode::kUnknownPlaceholder);
  CHECK(code_of([&] { tokenize("{question", allowed); }) == ErrorCode::kUnknownPlaceholder);
  CHECK(code_of([&] { tokenize("question}", allowed); }) == ErrorCode::kUnknownPlaceholder);
  const auto segs = tokenize("a{question}b", allowed);
  REQUIRE(segs.size() == 3);
  CHECK(segs[1].is_placeholder);
  CHECK(segs[1].text == "question");
}

TEST_CASE("missing reference and task mismatch") {
  const auto task = make_task("t");
  const auto r = make_response(task, 0, "R");
  CHECK(code_of([&] { render_pointwise(task, r, pointwise("p", "{response} vs {reference}")); }) ==
        ErrorCode::kMissingReference);
  const auto other = make_response(make_task("u"), 0, "R");
  CHECK(code_of([&] { render_pointwise(task, other, pointwise("p", "{response}")); }) ==
        ErrorCode::kTaskMismatch);
  const auto pair = pairwise("q", "{response_a}/{response_b}");
  CHECK(code_of([&] { render_pairwise(task, r, other, pair); }) == ErrorCode::kTaskMismatch);
}

TEST_CASE("load-time validation") {
  CHECK(code_of([&] { validate(pointwise("p", "{question}")); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { validate(pointwise("p", "{response} {response_a}")); }) == ErrorCode::kUnknownPlaceholder);
  auto no_scale = pointwise("p", "{response}");
  no_scale.score_scale.reset();
  CHECK(code_of([&] { validate(no_scale); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { validate(pairwise("q", "{response_a}")); }) == ErrorCode::kInvalidArgument);
  auto scaled = pairwise("q", "{response_a} {response_b}");
  scaled.score_scale = ScoreScale{1, 10};
  CHECK(code_of([&] { validate(scaled); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { validate(pairwise("q", "{response_a} {response_b} {bogus}")); }) ==
        ErrorCode::kUnknownPlaceholder);
  CHECK(code_of([&] {
          TemplatePool({pairwise("q", "{response_a}{response_b}"), pairwise("q", "{response_b}{response_a}")});
        }) == ErrorCode::kDuplicateTemplate);
}

TEST_CASE("caption-rating preset reproduces the published prompt") {
  const auto presets = pointwise_presets();
  const auto& t = presets.at("image_dc_0_100");
  CHECK(t.score_scale == ScoreScale{0, 100});
  CHECK(t.output_format == OutputFormat::kScoreLast);
  const auto task = make_task("train", "Describe the image in detail.");
  const auto out = render_pointwise(task, make_response(task, 0, kFourCars), t);
  const std::string tail = "Provide a few lines for explanation and the rate number at last after \"Final Score:\".";
  REQUIRE(out.size() >= tail.size());
  CHECK(out.substr(out.size() - tail.size()) == tail);
  CHECK(out.find(kFourCars) != std::string::npos);

  const auto& dual = presets.at("llava_wilder_dual");
  CHECK(dual.score_scale == ScoreScale{1, 10});
  CHECK(references_placeholder(dual, "reference"));
  CHECK(dual.body.find("Assume assistant 1 always receive a score of 10 and is the correct answer.") !=
        std::string::npos);
}

TEST_CASE("published pairwise prompt keeps A,B order and swaps only the slots") {
  const auto pool = default_pairwise_pool();
  const auto& t = pool.at("pairwise_caption_judge");
  const auto task = make_task("train", "Describe the image.");
  const auto a = make_response(task, 0, kSixCars);
  const auto b = make_response(task, 1, kFourCars);
  const auto ab = render_pairwise(task, a, b, t);
  const auto pa = ab.find(kSixCars), pb = ab.find(kFourCars);
  REQUIRE(pa != std::string::npos);
  REQUIRE(pb != std::string::npos);
  CHECK(pa < pb);
  CHECK(ab.find("Response A: [") != std::string::npos);

  // Swapping slots with control-byte markers leaves every other byte intact.
  const auto x = make_response(task, 0, "\x01\x01");
  const auto y = make_response(task, 1, "\x02\x02");
  for (const auto& tpl : pool.templates()) {
    auto xy = render_pairwise(task, x, y, tpl);
    const auto yx = render_pairwise(task, y, x, tpl);
    for (auto& c : xy) {
      if (c == '\x01') c = '\x02';
      else if (c == '\x02') c = '\x01';
    }
    CHECK_MESSAGE(xy == yx, tpl.template_id);
  }
}

TEST_CASE("default pairwise pool shape") {
  const auto pool = default_pairwise_pool();
  CHECK(pool.size() == 30);
  std::set<std::string> ids;
  for (const auto& t : pool.templates()) {
    ids.insert(t.template_id);
    CHECK(t.setting == Setting::kPairwise);
    validate(t);
    // Slot A precedes slot B in every shipped layout.
    CHECK(t.body.find("{response_a}") < t.body.find("{response_b}"));
  }
  CHECK(ids.size() == 30);
  CHECK(pool.at("pairwise_criteria").body.find("Response A: [{response_a}]") != std::string::npos);
  CHECK(pool.at("pairwise_general").body.find("The second response:") != std::string::npos);

  const auto round_trip = TemplatePool::from_json(pool.to_json());
  CHECK(round_trip.templates() == pool.templates());
}

TEST_CASE("rendering is pure and preserves substituted text") {
  const auto pool = default_pairwise_pool();
  critic::rng::SplitMix gen(3);
  const auto task = make_task("t", "What \\n does {{the}} sign say? \xE2\x9C\x93");
  for (int trial = 0; trial < 200; ++trial) {
    std::string a, b;
    const int la = static_cast<int>(gen.below(40)), lb = static_cast<int>(gen.below(40));
    for (int i = 0; i < la; ++i) a.push_back(static_cast<char>(' ' + gen.below(95)));
    for (int i = 0; i < lb; ++i) b.push_back(static_cast<char>(' ' + gen.below(95)));
    const auto& t = pool.templates()[gen.below(pool.size())];
    const auto ra = make_response(task, 0, a), rb = make_response(task, 1, b);
    const auto once = render_pairwise(task, ra, rb, t);
    CHECK(once == render_pairwise(task, ra, rb, t));
    CHECK(once.find(a) != std::string::npos);
    CHECK(once.find(b) != std::string::npos);
    CHECK(once.find(task.question) != std::string::npos);
  }
}

TEST_CASE("assign_template: singleton, determinism, mixed settings, empty pool") {
  const std::vector<PromptTemplate> single = {pairwise("only", "{response_a}{response_b}")};
  for (std::uint64_t i = 0; i < 50; ++i) CHECK(assign_template(single, i * 7919, i).template_id == "only");
  const auto pool = default_pairwise_pool();
  CHECK(assign_template(pool, 11, 123).template_id == assign_template(pool, 11, 123).template_id);
  const std::vector<PromptTemplate> empty;
  CHECK(code_of([&] { assign_template(empty, 0, 0); }) == ErrorCode::kEmptyPool);
  const std::vector<PromptTemplate> mixed = {pairwise("a", "{response_a}{response_b}"), pointwise("b", "{response}")};
  CHECK(code_of([&] { assign_template(mixed, 0, 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("assign_template is close to uniform over 30 templates") {
  const auto pool = default_pairwise_pool();
  std::map<std::string, int> counts;
  for (std::uint64_t i = 0; i < 30000; ++i) ++counts[assign_template(pool, 7, i).template_id];
  REQUIRE(counts.size() == 30);
  double chi2 = 0;
  for (const auto& [id, n] : counts) {
    CHECK_MESSAGE(n >= 900, id);
    CHECK_MESSAGE(n <= 1100, id);
    chi2 += (n - 1000.0) * (n - 1000.0) / 1000.0;
  }
  // 29 degrees of freedom; 0.999 quantile is about 58.3.
  CHECK(chi2 < 58.3);
}
