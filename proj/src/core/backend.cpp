#include "critic/backend.hpp"

#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "critic/random.hpp"

namespace critic::backend {

namespace {

std::string_view role_name(Role r) { return r == Role::kSystem ? "system" : "user"; }

Role role_from_string(std::string_view s) {
  if (s == "system") return Role::kSystem;
  if (s == "user") return Role::kUser;
  fail(ErrorCode::kInvalidArgument, "unsupported message role '" + std::string(s) + "'");
}

std::string base64(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string mime_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

std::string image_url_for(const std::string& ref) {
  const ImageRef image{ref};
  if (image.kind() != ImageRef::Kind::kFile) return ref;
  std::ifstream in(ref, std::ios::binary);
  if (!in) fail(ErrorCode::kInvalidArgument, "image reference not resolvable: " + ref);
  std::ostringstream buf;
  buf << in.rdbuf();
  return "data:" + mime_for(ref) + ";base64," + base64(buf.str());
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

void validate(const ChatRequest& request) {
  if (request.messages.empty()) fail(ErrorCode::kInvalidArgument, "chat request has no messages");
  bool has_user = false;
  for (const auto& m : request.messages) {
    has_user = has_user || m.role == Role::kUser;
    for (const auto& part : m.content) {
      if (part.kind == ContentPart::Kind::kImage && part.text.empty()) {
        fail(ErrorCode::kInvalidArgument, "image part carries no reference");
      }
    }
  }
  if (!has_user) fail(ErrorCode::kInvalidArgument, "chat request needs a user message");
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
    fail(ErrorCode::kInvalidArgument, "temperature must lie in [0, 2]");
  }
  if (!(request.top_p > 0.0 && request.top_p <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "top_p must lie in (0, 1]");
  }
  if (request.max_tokens <= 0) fail(ErrorCode::kInvalidArgument, "max_tokens must be positive");
}

nlohmann::json to_json(const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& p : m.content) {
      if (p.kind == ContentPart::Kind::kText) {
        parts.push_back({{"type", "text"}, {"text", p.text}});
      } else {
        parts.push_back({{"type", "image"}, {"image", p.text}});
      }
    }
    messages.push_back({{"role", role_name(m.role)}, {"content", std::move(parts)}});
  }
  nlohmann::json doc{{"model", request.model},
                     {"messages", std::move(messages)},
                     {"temperature", request.temperature},
                     {"top_p", request.top_p},
                     {"max_tokens", request.max_tokens}};
  if (request.seed) doc["seed"] = *request.seed;
  return doc;
}

ChatRequest request_from_json(const nlohmann::json& doc) {
  ChatRequest r;
  try {
    r.model = doc.value("model", std::string{});
    for (const auto& m : doc.at("messages")) {
      Message msg;
      msg.role = role_from_string(m.at("role").get<std::string>());
      const auto& content = m.at("content");
      if (content.is_string()) {
        msg.content.push_back(ContentPart::text_part(content.get<std::string>()));
      } else {
        for (const auto& p : content) {
          const auto type = p.at("type").get<std::string>();
          if (type == "text") {
            msg.content.push_back(ContentPart::text_part(p.at("text").get<std::string>()));
          } else if (type == "image") {
            msg.content.push_back({ContentPart::Kind::kImage, p.at("image").get<std::string>()});
          } else if (type == "image_url") {
            const auto& url = p.at("image_url");
            msg.content.push_back({ContentPart::Kind::kImage,
                                   url.is_string() ? url.get<std::string>()
                                                   : url.at("url").get<std::string>()});
          } else {
            fail(ErrorCode::kInvalidArgument, "unknown content part type '" + type + "'");
          }
        }
      }
      r.messages.push_back(std::move(msg));
    }
    r.temperature = doc.value("temperature", 0.0);
    r.top_p = doc.value("top_p", 1.0);
    r.max_tokens = doc.value("max_tokens", 1024);
    if (doc.contains("seed") && !doc.at("seed").is_null()) r.seed = doc.at("seed").get<std::int64_t>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed chat request: ") + ex.what());
  }
  return r;
}

nlohmann::json to_wire_json(const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& p : m.content) {
      if (p.kind == ContentPart::Kind::kText) {
        parts.push_back({{"type", "text"}, {"text", p.text}});
      } else {
        parts.push_back({{"type", "image_url"}, {"image_url", {{"url", image_url_for(p.text)}}}});
      }
    }
    messages.push_back({{"role", role_name(m.role)}, {"content", std::move(parts)}});
  }
  nlohmann::json doc{{"model", request.model},
                     {"messages", std::move(messages)},
                     {"temperature", request.temperature},
                     {"top_p", request.top_p},
                     {"max_tokens", request.max_tokens},
                     {"stream", false}};
  if (request.seed) doc["seed"] = *request.seed;
  return doc;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::string request_hash(std::string_view endpoint_url, const ChatRequest& request) {
  std::string material(endpoint_url);
  material.push_back('\n');
  material.append(request.model);
  material.push_back('\n');
  material.append(to_json(request).dump());
  return sha256_hex(material);
}

BackendConfig BackendConfig::from_json(const nlohmann::json& doc) {
  BackendConfig c;
  try {
    c.endpoint_url = doc.value("endpoint_url", c.endpoint_url);
    c.model = doc.value("model", c.model);
    c.api_key_env = doc.value("api_key_env", c.api_key_env);
    c.max_parallel = doc.value("max_parallel", c.max_parallel);
    c.max_retries = doc.value("max_retries", c.max_retries);
    c.retry_backoff_ms = doc.value("retry_backoff_ms", c.retry_backoff_ms);
    c.cache_dir = doc.value("cache_dir", std::string{});
    c.timeout_ms = doc.value("timeout_ms", c.timeout_ms);
    if (doc.contains("api_key")) {
      fail(ErrorCode::kInvalidArgument,
           "API keys are read from the environment; set api_key_env instead of api_key");
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed backend config: ") + ex.what());
  }
  validate(c);
  return c;
}

void validate(const BackendConfig& config) {
  if (config.max_parallel < 1) fail(ErrorCode::kInvalidArgument, "max_parallel must be >= 1");
  if (config.max_retries < 0) fail(ErrorCode::kInvalidArgument, "max_retries must be >= 0");
  if (config.retry_backoff_ms <= 0) fail(ErrorCode::kInvalidArgument, "retry_backoff_ms must be positive");
}

// ---------------------------------------------------------------------------
// Mocks

MockBackend::MockBackend(std::string endpoint_url, std::map<std::string, std::string> script)
    : endpoint_url_(std::move(endpoint_url)), script_(std::move(script)) {
  if (script_.empty()) fail(ErrorCode::kInvalidArgument, "mock script must not be empty");
}

std::unique_ptr<MockBackend> MockBackend::from_json(const nlohmann::json& doc) {
  try {
    const auto endpoint = doc.value("endpoint_url", std::string("mock://judge"));
    auto script = doc.at("script").get<std::map<std::string, std::string>>();
    return std::make_unique<MockBackend>(endpoint, std::move(script));
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed mock script: ") + ex.what());
  }
}

std::string MockBackend::complete(const ChatRequest& request) {
  calls_.fetch_add(1);
  const auto hash = request_hash(endpoint_url_, request);
  const auto it = script_.find(hash);
  if (it == script_.end()) fail(ErrorCode::kScriptMiss, "mock has no reply for request " + hash);
  return it->second;
}

FaultInjectingBackend::FaultInjectingBackend(std::shared_ptr<ChatBackend> inner, double failure_rate,
                                             std::uint64_t seed)
    : inner_(std::move(inner)), failure_rate_(failure_rate), seed_(seed) {
  if (!inner_) fail(ErrorCode::kInvalidArgument, "fault injector needs an inner backend");
  if (!(failure_rate >= 0.0 && failure_rate < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "failure rate must lie in [0, 1)");
  }
}

std::string FaultInjectingBackend::complete(const ChatRequest& request) {
  calls_.fetch_add(1);
  const auto hash = request_hash(inner_->endpoint_url(), request);
  std::uint64_t attempt = 0;
  {
    std::lock_guard lock(mu_);
    attempt = attempts_[hash]++;
  }
  rng::SplitMix gen(rng::mix(rng::mix(seed_, rng::fnv1a(hash)), attempt));
  if (gen.unit() < failure_rate_) {
    injected_.fetch_add(1);
    fail(ErrorCode::kTransportError, "injected transient failure");
  }
  return inner_->complete(request);
}

// ---------------------------------------------------------------------------
// Cache

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create cache dir " + dir_.string() + ": " + ec.message());
}

std::optional<std::string> ResponseCache::get(std::string_view hash) const {
  const auto path = dir_ / (std::string(hash) + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    nlohmann::json doc;
    in >> doc;
    if (doc.value("request_hash", std::string{}) != hash) return std::nullopt;
    return doc.at("reply").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    // Truncated or foreign file: treat as a miss; the next put replaces it.
    return std::nullopt;
  }
}

void ResponseCache::put(std::string_view hash, std::string_view model, std::string_view reply) const {
  static std::atomic<std::uint64_t> counter{0};
  const auto final_path = dir_ / (std::string(hash) + ".json");
  std::ostringstream tmp_name;
  tmp_name << '.' << hash << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id())
           << '.' << counter.fetch_add(1);
  const auto tmp_path = dir_ / tmp_name.str();
  {
    std::ofstream out(tmp_path, std::ios::trunc);
    if (!out) fail(ErrorCode::kIoError, "cannot write cache entry " + tmp_path.string());
    nlohmann::ordered_json doc{{"request_hash", hash},
                               {"model", model},
                               {"reply", reply},
                               {"timestamp", utc_timestamp()}};
    out << doc.dump() << '\n';
    if (!out) fail(ErrorCode::kIoError, "short write to cache entry " + tmp_path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp_path, final_path, ec);
  if (ec) {
    std::filesystem::remove(tmp_path, ec);
    fail(ErrorCode::kIoError, "cannot publish cache entry " + final_path.string());
  }
}

// ---------------------------------------------------------------------------
// Client

Client::Client(std::shared_ptr<ChatBackend> backend, BackendConfig config)
    : backend_(std::move(backend)),
      config_(std::move(config)),
      slots_(std::max(1, config_.max_parallel)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  if (!backend_) fail(ErrorCode::kInvalidArgument, "client needs a backend");
  validate(config_);
  if (config_.endpoint_url.empty()) config_.endpoint_url = backend_->endpoint_url();
  if (!config_.cache_dir.empty()) cache_.emplace(config_.cache_dir);
}

std::string Client::complete(const ChatRequest& request) {
  validate(request);
  requests_.fetch_add(1);
  const auto hash = request_hash(config_.endpoint_url, request);
  if (cache_) {
    if (auto hit = cache_->get(hash)) {
      hits_.fetch_add(1);
      return *std::move(hit);
    }
  }
  misses_.fetch_add(1);

  for (int attempt = 0;; ++attempt) {
    std::string reply;
    std::optional<Error> failure;
    slots_.acquire();
    const auto now = in_flight_.fetch_add(1) + 1;
    auto peak = peak_in_flight_.load();
    while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
    }
    backend_calls_.fetch_add(1);
    try {
      reply = backend_->complete(request);
    } catch (const Error& e) {
      failure = e;
    } catch (const std::exception& e) {
      failure = Error(ErrorCode::kInternal, e.what());
    }
    in_flight_.fetch_sub(1);
    slots_.release();

    if (!failure) {
      if (cache_) cache_->put(hash, request.model, reply);
      return reply;
    }
    if (!failure->retryable()) throw *failure;
    if (attempt >= config_.max_retries) {
      fail(ErrorCode::kTransportError, "request failed after " + std::to_string(attempt + 1) +
                                           " attempts: " + failure->what());
    }
    retries_.fetch_add(1);
    const auto backoff = static_cast<long long>(config_.retry_backoff_ms) << std::min(attempt, 16);
    sleeper_(std::chrono::milliseconds(backoff));
  }
}

ClientStats Client::stats() const {
  return {requests_.load(), hits_.load(), misses_.load(), backend_calls_.load(), retries_.load(),
          peak_in_flight_.load()};
}

void Client::reset_stats() {
  requests_ = 0;
  hits_ = 0;
  misses_ = 0;
  backend_calls_ = 0;
  retries_ = 0;
  peak_in_flight_ = 0;
}

std::shared_ptr<ChatBackend> make_backend(const nlohmann::json& spec, const BackendConfig& config) {
  const auto type = spec.value("type", std::string("http"));
  if (type == "mock") return MockBackend::from_json(spec);
  if (type == "http") return std::make_shared<HttpBackend>(config);
  fail(ErrorCode::kInvalidArgument, "unknown backend type '" + type + "'");
}

// ---------------------------------------------------------------------------
// Generation

std::string response_id(std::string_view task_id, int ordinal) {
  return std::string(task_id) + "#" + std::to_string(ordinal);
}

ChatRequest sampling_request(const EvalTask& task, const SamplingPolicy& policy,
                             std::string_view model, std::uint64_t base_seed, int ordinal) {
  ChatRequest r;
  r.model = std::string(model);
  Message user;
  user.role = Role::kUser;
  if (!task.image.empty()) user.content.push_back(ContentPart::image_part(task.image));
  user.content.push_back(ContentPart::text_part(task.question));
  r.messages.push_back(std::move(user));
  r.temperature = policy.temperature;
  r.top_p = policy.top_p;
  r.max_tokens = policy.max_tokens;
  const auto seed = rng::mix(rng::mix(base_seed, rng::fnv1a(task.task_id)),
                             static_cast<std::uint64_t>(ordinal));
  // Keep seeds in the positive int64 range most servers accept.
  r.seed = static_cast<std::int64_t>(seed >> 1);
  return r;
}

GenerationResult generate_responses(const EvalTask& task, const SamplingPolicy& policy,
                                    Client& client, std::uint64_t base_seed) {
  if (policy.k < 1) fail(ErrorCode::kInvalidArgument, "sampling policy needs k >= 1");
  validate(task);
  GenerationResult out;
  for (int i = 0; i < policy.k; ++i) {
    const auto request = sampling_request(task, policy, client.config().model, base_seed, i);
    try {
      auto text = client.complete(request);
      if (text.empty()) fail(ErrorCode::kInvalidArgument, "generator returned empty text");
      out.responses.push_back({response_id(task.task_id, i), task.task_id, client.config().model,
                               std::move(text)});
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kAuthError) throw;
      out.failures.push_back(response_id(task.task_id, i) + ": " + e.what());
    }
  }
  if (policy.strict && static_cast<int>(out.responses.size()) < policy.k) {
    fail(ErrorCode::kPartialGeneration,
         "task '" + task.task_id + "': " + std::to_string(out.responses.size()) + " of " +
             std::to_string(policy.k) + " samples succeeded (" + out.failures.front() + ")");
  }
  return out;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (count == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr first;
  {
    std::vector<std::jthread> threads;
    threads.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
      threads.emplace_back([&] {
        for (;;) {
          const auto i = next.fetch_add(1);
          if (i >= n) return;
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!first) first = std::current_exception();
          }
        }
      });
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace critic::backend
