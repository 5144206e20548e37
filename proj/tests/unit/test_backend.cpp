#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <thread>

#include "httplib.h"

#include "critic/backend.hpp"
#include "critic/io.hpp"
#include "support.hpp"

using namespace critic;
using namespace critic::backend;
using testsupport::make_task;
using testsupport::TempDir;

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

ChatRequest simple_request(const std::string& text = "Describe the image.") {
  ChatRequest r;
  r.model = "judge-model";
  Message m;
  m.content.push_back(ContentPart::image_part({"https://example.org/train.jpg"}));
  m.content.push_back(ContentPart::text_part(text));
  r.messages.push_back(m);
  return r;
}

// Loopback OpenAI-style server on an ephemeral port.
class LoopbackServer {
 public:
  LoopbackServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LoopbackServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string completion_body(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

BackendConfig http_config(const std::string& url) {
  BackendConfig c;
  c.endpoint_url = url;
  c.model = "judge-model";
  c.max_retries = 2;
  c.retry_backoff_ms = 1;
  c.timeout_ms = 5000;
  return c;
}

}  // namespace

TEST_CASE("request hash is canonical and content sensitive") {
  const auto r = simple_request();
  const auto a = request_from_json(nlohmann::json::parse(R"({
    "model": "judge-model", "temperature": 0, "top_p": 1, "max_tokens": 1024,
    "messages": [{"role": "user", "content": [
      {"type": "image", "image": "https://example.org/train.jpg"},
      {"text": "Describe the image.", "type": "text"}]}]})"));
  const auto b = request_from_json(nlohmann::json::parse(R"({
    "max_tokens": 1024, "messages": [{"content": [
      {"image": "https://example.org/train.jpg", "type": "image"},
      {"type": "text", "text": "Describe the image."}], "role": "user"}],
    "top_p": 1, "temperature": 0, "model": "judge-model"})"));
  CHECK(request_hash("mock://judge", r) == request_hash("mock://judge", a));
  CHECK(request_hash("mock://judge", a) == request_hash("mock://judge", b));
  CHECK(request_hash("mock://judge", r) != request_hash("mock://other", r));
  CHECK(request_hash("mock://judge", r) != request_hash("mock://judge", simple_request("Describe the image!")));
  auto hot = r;
  hot.temperature = 0.7;
  CHECK(request_hash("mock://judge", r) != request_hash("mock://judge", hot));
  CHECK(request_hash("x", r).size() == 64);
  CHECK(request_from_json(to_json(r)) == r);
}

TEST_CASE("request validation") {
  auto r = simple_request();
  r.top_p = 0;
  CHECK(code_of([&] { validate(r); }) == ErrorCode::kInvalidArgument);
  r = simple_request();
  r.messages.clear();
  CHECK(code_of([&] { validate(r); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { BackendConfig::from_json({{"endpoint_url", "http://x"}, {"api_key", "sk"}}); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("mock backend: script lookup, miss, empty script") {
  const auto r = simple_request();
  MockBackend mock("mock://judge", {{request_hash("mock://judge", r), "Final Score: 85"}});
  CHECK(mock.complete(r) == "Final Score: 85");
  CHECK(code_of([&] { mock.complete(simple_request("other")); }) == ErrorCode::kScriptMiss);
  CHECK(code_of([] { MockBackend("mock://judge", {}); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("warm cache answers without reaching the backend") {
  TempDir dir;
  auto backend = std::make_shared<CallbackBackend>("mock://judge", [](const ChatRequest&) {
    return std::string("Final Score: 85");
  });
  auto config = testsupport::mock_config("mock://judge", 2, dir / "cache");
  {
    Client cold(backend, config);
    CHECK(cold.complete(simple_request()) == "Final Score: 85");
    CHECK(cold.stats().backend_calls == 1);
  }
  Client warm(backend, config);
  CHECK(warm.complete(simple_request()) == "Final Score: 85");
  CHECK(warm.stats().cache_hits == 1);
  CHECK(warm.stats().backend_calls == 0);
  CHECK(backend->calls() == 1);

  const auto hash = request_hash("mock://judge", simple_request());
  const auto entry = nlohmann::json::parse(io::read_text(dir / "cache" / (hash + ".json")));
  CHECK(entry.at("request_hash") == hash);
  CHECK(entry.at("reply") == "Final Score: 85");

  // A corrupt entry is a miss, not an error.
  {
    std::ofstream(dir / "cache" / (hash + ".json"), std::ios::trunc) << "{not json";
  }
  Client again(backend, config);
  CHECK(again.complete(simple_request()) == "Final Score: 85");
  CHECK(again.stats().cache_misses == 1);
}

TEST_CASE("transient failures are retried, others are not") {
  int calls = 0;
  auto flaky = std::make_shared<CallbackBackend>("mock://judge", [&](const ChatRequest&) -> std::string {
    if (++calls <= 2) fail(ErrorCode::kTransportError, "503");
    return "ok";
  });
  std::vector<long long> sleeps;
  Client client(flaky, testsupport::mock_config("mock://judge"));
  client.set_sleeper([&](std::chrono::milliseconds ms) { sleeps.push_back(ms.count()); });
  CHECK(client.complete(simple_request()) == "ok");
  CHECK(client.stats().retries == 2);
  CHECK(sleeps == std::vector<long long>{1, 2});

  int auth_calls = 0;
  auto denied = std::make_shared<CallbackBackend>("mock://judge", [&](const ChatRequest&) -> std::string {
    ++auth_calls;
    fail(ErrorCode::kAuthError, "401");
  });
  Client client2(denied, testsupport::mock_config("mock://judge"));
  CHECK(code_of([&] { client2.complete(simple_request()); }) == ErrorCode::kAuthError);
  CHECK(auth_calls == 1);
}

TEST_CASE("in-flight requests never exceed max_parallel") {
  std::atomic<int> now{0}, peak{0};
  auto slow = std::make_shared<CallbackBackend>("mock://judge", [&](const ChatRequest& r) {
    const int n = now.fetch_add(1) + 1;
    int p = peak.load();
    while (n > p && !peak.compare_exchange_weak(p, n)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(3));
    now.fetch_sub(1);
    return testsupport::request_text(r);
  });
  Client client(slow, testsupport::mock_config("mock://judge", 3));
  parallel_for(40, 8, [&](std::size_t i) { client.complete(simple_request("q" + std::to_string(i))); });
  CHECK(peak.load() <= 3);
  CHECK(client.stats().peak_in_flight <= 3);
  CHECK(client.stats().backend_calls == 40);
}

TEST_CASE("response generation") {
  const auto task = make_task("t1", "What is on the sign?");
  SamplingPolicy policy;
  std::vector<ChatRequest> seen;
  std::mutex mu;
  auto gen = std::make_shared<CallbackBackend>("mock://gen", [&](const ChatRequest& r) {
    std::lock_guard lock(mu);
    seen.push_back(r);
    return "reply-" + std::to_string(seen.size());
  });
  Client client(gen, testsupport::mock_config("mock://gen"));
  const auto out = generate_responses(task, policy, client, 42);
  REQUIRE(out.responses.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(out.responses[i].response_id == "t1#" + std::to_string(i));
    CHECK(out.responses[i].text == "reply-" + std::to_string(i + 1));
    CHECK(seen[i].temperature == 0.7);
    CHECK(seen[i].top_p == 0.9);
  }
  CHECK(seen[0].seed != seen[1].seed);
  CHECK(sampling_request(task, policy, "m", 42, 3) == sampling_request(task, policy, "m", 42, 3));

  auto broken = std::make_shared<CallbackBackend>("mock://gen", [](const ChatRequest& r) -> std::string {
    if (r.seed == sampling_request(make_task("t1", "What is on the sign?"), SamplingPolicy{}, "mock-model", 42, 2).seed) {
      fail(ErrorCode::kTransportError, "down");
    }
    return "fine";
  });
  Client client2(broken, testsupport::mock_config("mock://gen"));
  client2.set_sleeper([](std::chrono::milliseconds) {});
  const auto partial = generate_responses(task, policy, client2, 42);
  CHECK(partial.responses.size() == 4);
  CHECK(partial.failures.size() == 1);
  policy.strict = true;
  CHECK(code_of([&] { generate_responses(task, policy, client2, 42); }) == ErrorCode::kPartialGeneration);
}

TEST_CASE("fault injection is deterministic and retries recover") {
  auto inner = std::make_shared<CallbackBackend>("mock://judge", [](const ChatRequest& r) {
    return testsupport::request_text(r);
  });
  auto faulty = std::make_shared<FaultInjectingBackend>(inner, 0.3, 5);
  auto config = testsupport::mock_config("mock://judge");
  config.max_retries = 20;
  Client client(faulty, config);
  client.set_sleeper([](std::chrono::milliseconds) {});
  for (int i = 0; i < 100; ++i) CHECK(client.complete(simple_request("q" + std::to_string(i))) == "q" + std::to_string(i));
  CHECK(faulty->injected_failures() > 10);
  CHECK(faulty->injected_failures() == client.stats().retries);

  auto faulty2 = std::make_shared<FaultInjectingBackend>(inner, 0.3, 5);
  Client client2(faulty2, config);
  client2.set_sleeper([](std::chrono::milliseconds) {});
  for (int i = 0; i < 100; ++i) client2.complete(simple_request("q" + std::to_string(i)));
  CHECK(faulty2->injected_failures() == faulty->injected_failures());
}

TEST_CASE("http backend against a loopback server") {
  LoopbackServer srv;
  std::atomic<int> flaky_calls{0};
  std::string last_auth, last_body;
  std::mutex mu;
  srv.server().Post("/ok", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    last_auth = req.get_header_value("Authorization");
    last_body = req.body;
    res.set_content(completion_body("Final Score: 85"), "application/json");
  });
  srv.server().Post("/denied", [](const httplib::Request&, httplib::Response& res) {
    res.status = 401;
    res.set_content("{}", "application/json");
  });
  srv.server().Post("/flaky", [&](const httplib::Request&, httplib::Response& res) {
    if (flaky_calls.fetch_add(1) < 2) {
      res.status = 503;
      return;
    }
    res.set_content(completion_body("Response B is better than response A"), "application/json");
  });

  TempDir dir;
  const auto image = dir / "img.png";
  {
    std::ofstream(image, std::ios::binary) << std::string("\x89PNG\r\n\x1a\n", 8);
  }

  SUBCASE("success with key from the environment and inlined local image") {
    ::setenv("CRITIC_TEST_KEY", "sk-test", 1);
    auto config = http_config(srv.url("/ok"));
    config.api_key_env = "CRITIC_TEST_KEY";
    Client client(std::make_shared<HttpBackend>(config), config);
    auto r = simple_request();
    r.messages[0].content[0] = ContentPart::image_part({image.string()});
    CHECK(client.complete(r) == "Final Score: 85");
    std::lock_guard lock(mu);
    CHECK(last_auth == "Bearer sk-test");
    const auto body = nlohmann::json::parse(last_body);
    CHECK(body.at("stream") == false);
    const auto url = body["messages"][0]["content"][0]["image_url"]["url"].get<std::string>();
    CHECK(url.rfind("data:image/png;base64,", 0) == 0);
  }
  SUBCASE("unset key variable is an auth error") {
    ::unsetenv("CRITIC_TEST_MISSING_KEY");
    auto config = http_config(srv.url("/ok"));
    config.api_key_env = "CRITIC_TEST_MISSING_KEY";
    CHECK(code_of([&] { HttpBackend backend(config); }) == ErrorCode::kAuthError);
  }
  SUBCASE("401 is not retried") {
    auto config = http_config(srv.url("/denied"));
    Client client(std::make_shared<HttpBackend>(config), config);
    CHECK(code_of([&] { client.complete(simple_request()); }) == ErrorCode::kAuthError);
    CHECK(client.stats().backend_calls == 1);
  }
  SUBCASE("5xx is retried until success") {
    auto config = http_config(srv.url("/flaky"));
    Client client(std::make_shared<HttpBackend>(config), config);
    client.set_sleeper([](std::chrono::milliseconds) {});
    CHECK(client.complete(simple_request()) == "Response B is better than response A");
    CHECK(client.stats().backend_calls == 3);
  }
  SUBCASE("unreachable endpoint fails after max_retries + 1 attempts") {
    // Grab a free port, then close it so nothing listens there.
    int dead_port = 0;
    {
      httplib::Server probe;
      dead_port = probe.bind_to_any_port("127.0.0.1");
    }
    auto config = http_config("http://127.0.0.1:" + std::to_string(dead_port));
    Client client(std::make_shared<HttpBackend>(config), config);
    client.set_sleeper([](std::chrono::milliseconds) {});
    std::string message;
    try {
      client.complete(simple_request());
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTransportError);
      message = e.what();
    }
    CHECK(client.stats().backend_calls == 3);
    CHECK(message.find("after 3 attempts") != std::string::npos);
  }
}
