#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "critic/types.hpp"

namespace critic::backend {

enum class Role { kSystem, kUser };

struct ContentPart {
  enum class Kind { kText, kImage };
  Kind kind = Kind::kText;
  std::string text;  // text payload, or image reference for kImage

  static ContentPart text_part(std::string s) { return {Kind::kText, std::move(s)}; }
  static ContentPart image_part(const ImageRef& ref) { return {Kind::kImage, ref.value}; }
  bool operator==(const ContentPart&) const = default;
};

struct Message {
  Role role = Role::kUser;
  std::vector<ContentPart> content;
  bool operator==(const Message&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<Message> messages;
  double temperature = 0.0;
  double top_p = 1.0;
  int max_tokens = 1024;
  std::optional<std::int64_t> seed;

  bool operator==(const ChatRequest&) const = default;
};

void validate(const ChatRequest& request);

// Canonical JSON form: object keys sorted, parts in message order.
nlohmann::json to_json(const ChatRequest& request);
ChatRequest request_from_json(const nlohmann::json& doc);

// Wire body for an OpenAI-style /chat/completions endpoint. Image parts are
// sent as image_url entries; local files are inlined as base64 data URLs.
nlohmann::json to_wire_json(const ChatRequest& request);

// Hex SHA-256 over (endpoint_url, model, canonical request).
std::string request_hash(std::string_view endpoint_url, const ChatRequest& request);

std::string sha256_hex(std::string_view data);

struct BackendConfig {
  std::string endpoint_url;
  std::string model;
  std::string api_key_env;  // name of the environment variable holding the key
  int max_parallel = 4;
  int max_retries = 3;
  int retry_backoff_ms = 200;
  std::filesystem::path cache_dir;  // empty disables caching
  int timeout_ms = 120000;

  static BackendConfig from_json(const nlohmann::json& doc);
};

void validate(const BackendConfig& config);

struct SamplingPolicy {
  int k = 5;
  double temperature = 0.7;
  double top_p = 0.9;
  int max_tokens = 1024;
  bool strict = false;
};

// One endpoint. Implementations must be safe for concurrent callers.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
  virtual std::string endpoint_url() const = 0;
};

// Answers from a fixed request-hash -> reply script.
class MockBackend final : public ChatBackend {
 public:
  MockBackend(std::string endpoint_url, std::map<std::string, std::string> script);

  static std::unique_ptr<MockBackend> from_json(const nlohmann::json& doc);

  std::string complete(const ChatRequest& request) override;
  std::string endpoint_url() const override { return endpoint_url_; }
  std::uint64_t calls() const noexcept { return calls_.load(); }

 private:
  std::string endpoint_url_;
  std::map<std::string, std::string> script_;
  std::atomic<std::uint64_t> calls_{0};
};

// Rule-based mock: a pure function from request to reply.
class CallbackBackend final : public ChatBackend {
 public:
  using Fn = std::function<std::string(const ChatRequest&)>;
  CallbackBackend(std::string endpoint_url, Fn fn)
      : endpoint_url_(std::move(endpoint_url)), fn_(std::move(fn)) {}

  std::string complete(const ChatRequest& request) override {
    calls_.fetch_add(1);
    return fn_(request);
  }
  std::string endpoint_url() const override { return endpoint_url_; }
  std::uint64_t calls() const noexcept { return calls_.load(); }

 private:
  std::string endpoint_url_;
  Fn fn_;
  std::atomic<std::uint64_t> calls_{0};
};

// Wraps another backend and fails a deterministic fraction of attempts with
// TransportError. The decision depends on (request hash, attempt number), so
// a retry of the same request eventually gets through.
class FaultInjectingBackend final : public ChatBackend {
 public:
  FaultInjectingBackend(std::shared_ptr<ChatBackend> inner, double failure_rate, std::uint64_t seed);

  std::string complete(const ChatRequest& request) override;
  std::string endpoint_url() const override { return inner_->endpoint_url(); }
  std::uint64_t injected_failures() const noexcept { return injected_.load(); }
  std::uint64_t calls() const noexcept { return calls_.load(); }

 private:
  std::shared_ptr<ChatBackend> inner_;
  double failure_rate_;
  std::uint64_t seed_;
  std::mutex mu_;
  std::map<std::string, std::uint64_t> attempts_;
  std::atomic<std::uint64_t> injected_{0};
  std::atomic<std::uint64_t> calls_{0};
};

// OpenAI-compatible chat-completion client over HTTP(S).
class HttpBackend final : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig config);

  std::string complete(const ChatRequest& request) override;
  std::string endpoint_url() const override { return config_.endpoint_url; }

 private:
  BackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_;
};

// Content-addressed reply store: <dir>/<hash>.json holding
// {request_hash, model, reply, timestamp}. Writes go to a temp file and are
// renamed into place; existing entries are never rewritten.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<std::string> get(std::string_view hash) const;
  void put(std::string_view hash, std::string_view model, std::string_view reply) const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
};

struct ClientStats {
  std::uint64_t requests = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t backend_calls = 0;  // attempts that reached the backend
  std::uint64_t retries = 0;
  std::uint64_t peak_in_flight = 0;
};

// Cache + retry + concurrency bound in front of a backend.
class Client {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Client(std::shared_ptr<ChatBackend> backend, BackendConfig config);

  std::string complete(const ChatRequest& request);

  const BackendConfig& config() const noexcept { return config_; }
  std::string endpoint_url() const { return config_.endpoint_url; }
  ClientStats stats() const;
  void reset_stats();
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

 private:
  std::shared_ptr<ChatBackend> backend_;
  BackendConfig config_;
  std::optional<ResponseCache> cache_;
  std::counting_semaphore<> slots_;
  Sleeper sleeper_;

  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
  std::atomic<std::uint64_t> backend_calls_{0};
  std::atomic<std::uint64_t> retries_{0};
  std::atomic<std::uint64_t> in_flight_{0};
  std::atomic<std::uint64_t> peak_in_flight_{0};
};

// Builds a backend from a JSON spec: {"type": "http", ...BackendConfig} or
// {"type": "mock", "endpoint_url": ..., "script": {hash: reply}}.
std::shared_ptr<ChatBackend> make_backend(const nlohmann::json& spec, const BackendConfig& config);

// Sampling request for the `ordinal`-th response to a task. The seed is
// derived from (base_seed, task_id, ordinal), so each sample is distinct and
// reproducible.
ChatRequest sampling_request(const EvalTask& task, const SamplingPolicy& policy,
                             std::string_view model, std::uint64_t base_seed, int ordinal);

std::string response_id(std::string_view task_id, int ordinal);

struct GenerationResult {
  std::vector<CandidateResponse> responses;
  std::vector<std::string> failures;  // one message per failed sample
};

// Samples policy.k completions in ordinal order. In strict mode any failed
// sample raises PartialGeneration; AuthError always propagates.
GenerationResult generate_responses(const EvalTask& task, const SamplingPolicy& policy,
                                    Client& client, std::uint64_t base_seed);

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// is rethrown after all workers join.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace critic::backend
