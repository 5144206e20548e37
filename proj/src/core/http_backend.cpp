#include <cstdlib>

#ifdef CRITIC_WITH_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "critic/backend.hpp"

namespace critic::backend {

namespace {

std::string extract_reply(const nlohmann::json& body) {
  const auto& choices = body.at("choices");
  if (!choices.is_array() || choices.empty()) {
    fail(ErrorCode::kTransportError, "completion response carries no choices");
  }
  const auto& content = choices.at(0).at("message").at("content");
  if (content.is_string()) return content.get<std::string>();
  // Some servers return content as a list of typed parts.
  std::string out;
  for (const auto& part : content) {
    if (part.value("type", std::string{}) == "text") out += part.value("text", std::string{});
  }
  return out;
}

}  // namespace

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  validate(config_);
  const auto& url = config_.endpoint_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    fail(ErrorCode::kInvalidArgument, "endpoint_url needs a scheme: '" + url + "'");
  }
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    fail(ErrorCode::kInvalidArgument, "unsupported endpoint scheme '" + scheme + "'");
  }
#ifndef CRITIC_WITH_OPENSSL
  if (scheme == "https") fail(ErrorCode::kInvalidArgument, "built without TLS support");
#endif
  const auto path_begin = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_begin);
  path_ = path_begin == std::string::npos ? std::string{} : url.substr(path_begin);
  if (path_.empty() || path_ == "/") path_ = "/v1/chat/completions";

  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      fail(ErrorCode::kAuthError, "environment variable " + config_.api_key_env + " is not set");
    }
    api_key_ = key;
  }
}

std::string HttpBackend::complete(const ChatRequest& request) {
  httplib::Client cli(scheme_host_port_);
  const auto timeout_s = config_.timeout_ms / 1000;
  const auto timeout_us = (config_.timeout_ms % 1000) * 1000;
  cli.set_connection_timeout(timeout_s, timeout_us);
  cli.set_read_timeout(timeout_s, timeout_us);
  cli.set_write_timeout(timeout_s, timeout_us);

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto body = to_wire_json(request).dump();
  const auto res = cli.Post(path_, headers, body, "application/json");
  if (!res) {
    fail(ErrorCode::kTransportError,
         "POST " + scheme_host_port_ + path_ + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 401 || res->status == 403) {
    fail(ErrorCode::kAuthError, "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
  }
  if (res->status == 408 || res->status == 429 || res->status >= 500) {
    fail(ErrorCode::kTransportError, "transient HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    fail(ErrorCode::kInvalidArgument,
         "endpoint refused request (HTTP " + std::to_string(res->status) + "): " + res->body.substr(0, 200));
  }
  try {
    return extract_reply(nlohmann::json::parse(res->body));
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kTransportError, std::string("unreadable completion body: ") + ex.what());
  }
}

}  // namespace critic::backend
