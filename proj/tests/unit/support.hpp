#pragma once

// Shared fixtures for the unit and acceptance tests: temp dirs, synthetic
// tasks, rule-based mock generators and judges with a latent quality model.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <regex>
#include <string>
#include <unistd.h>
#include <vector>

#include "critic/backend.hpp"
#include "critic/random.hpp"
#include "critic/types.hpp"

namespace testsupport {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("critic_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline critic::EvalTask make_task(const std::string& id, const std::string& question = "Describe the image.",
                                  std::optional<std::string> reference = std::nullopt) {
  critic::EvalTask t;
  t.task_id = id;
  t.question = question;
  t.image.value = "images/" + id + ".png";
  t.reference_answer = std::move(reference);
  return t;
}

inline critic::CandidateResponse make_response(const critic::EvalTask& task, int ordinal,
                                               const std::string& text) {
  return {task.task_id + "#" + std::to_string(ordinal), task.task_id, "mock-policy", text};
}

// Concatenated text parts of the request's user messages.
inline std::string request_text(const critic::backend::ChatRequest& r) {
  std::string out;
  for (const auto& m : r.messages) {
    for (const auto& p : m.content) {
      if (p.kind == critic::backend::ContentPart::Kind::kText) out += p.text;
    }
  }
  return out;
}

inline std::string quality_tag(double q) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "[q=%.6f]", q);
  return buf;
}

// Latent qualities in order of appearance in a rendered prompt.
inline std::vector<double> qualities_in(const std::string& text) {
  static const std::regex tag(R"(\[q=(-?[0-9]+\.[0-9]+)\])");
  std::vector<double> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), tag); it != std::sregex_iterator(); ++it) {
    out.push_back(std::stod((*it)[1].str()));
  }
  return out;
}

inline const char* kPreferA = "Response A is better than response B because it is more accurate.";
inline const char* kPreferB = "Response B is better than response A because it is more accurate.";
inline const char* kTieReply = "Both responses are equally good; it is a tie.";

// Consistent judge over quality tags. Qualities falling in the same bucket of
// width `resolution` are judged a tie; resolution 0 resolves any difference.
inline critic::backend::CallbackBackend::Fn quality_judge(double resolution = 0.0) {
  return [resolution](const critic::backend::ChatRequest& r) -> std::string {
    const auto q = qualities_in(request_text(r));
    if (q.size() != 2) critic::fail(critic::ErrorCode::kInternal, "judge expected two tagged responses");
    if (resolution > 0) {
      const auto ba = std::floor(q[0] / resolution), bb = std::floor(q[1] / resolution);
      if (ba == bb) return kTieReply;
      return ba > bb ? kPreferA : kPreferB;
    }
    if (q[0] == q[1]) return kTieReply;
    return q[0] > q[1] ? kPreferA : kPreferB;
  };
}

// Generator whose latent quality lies in [base, base * (1 + spread)], drawn
// from the request seed so each sample is reproducible.
inline critic::backend::CallbackBackend::Fn quality_generator(double base, double spread) {
  return [base, spread](const critic::backend::ChatRequest& r) -> std::string {
    const auto seed = static_cast<std::uint64_t>(r.seed.value_or(0));
    const double q = base * (1.0 + spread * critic::rng::SplitMix(seed).unit());
    return "Answer " + std::to_string(seed % 100000) + " to: " + request_text(r) + " " + quality_tag(q);
  };
}

inline critic::backend::BackendConfig mock_config(const std::string& endpoint, int max_parallel = 1,
                                                  std::filesystem::path cache_dir = {}) {
  critic::backend::BackendConfig c;
  c.endpoint_url = endpoint;
  c.model = "mock-model";
  c.max_parallel = max_parallel;
  c.max_retries = 3;
  c.retry_backoff_ms = 1;
  c.cache_dir = std::move(cache_dir);
  return c;
}

inline std::unique_ptr<critic::backend::Client> callback_client(critic::backend::CallbackBackend::Fn fn,
                                                                const std::string& endpoint,
                                                                int max_parallel = 1,
                                                                std::filesystem::path cache_dir = {}) {
  auto backend = std::make_shared<critic::backend::CallbackBackend>(endpoint, std::move(fn));
  auto client = std::make_unique<critic::backend::Client>(backend, mock_config(endpoint, max_parallel, cache_dir));
  client->set_sleeper([](std::chrono::milliseconds) {});
  return client;
}

}  // namespace testsupport
