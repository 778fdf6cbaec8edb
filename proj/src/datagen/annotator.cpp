#include "uq/datagen/annotator.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <thread>

#include <spdlog/spdlog.h>

#include "httplib.h"
#include "json.hpp"
#include "uq/common/error.hpp"

namespace uq::data {

void RemoteAnnotatorConfig::validate() const {
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
    fail(ErrorCode::kConfig, "remote annotator endpoint must be an http(s) URL, got '" + endpoint + "'");
  }
  if (model.empty()) fail(ErrorCode::kConfig, "remote annotator needs a model name");
  if (max_retries < 0 || timeout_seconds <= 0 || backoff_seconds < 0 || max_in_flight == 0) {
    fail(ErrorCode::kConfig, "remote annotator retry/timeout/in-flight settings out of range");
  }
}

Label map_verdict(const std::string& word, bool* recognized) {
  std::string w;
  for (char ch : word) {
    if (std::isalpha(static_cast<unsigned char>(ch))) w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (recognized != nullptr) *recognized = true;
  if (w == "supported") return Label::kSupported;
  if (w == "unsupported") return Label::kUnsupported;
  if (w == "unknown") return Label::kUnknown;
  if (recognized != nullptr) *recognized = false;
  return Label::kUnknown;
}

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // base path without trailing slash
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto slash = url.find('/', scheme_end + 3);
  Endpoint e{url.substr(0, slash), slash == std::string::npos ? "" : url.substr(slash)};
  while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
  return e;
}

class ChatClient {
 public:
  ChatClient(const RemoteAnnotatorConfig& config, std::string claim_id)
      : config_(config), claim_id_(std::move(claim_id)), endpoint_(split_endpoint(config.endpoint)) {
    if (!config.token_env.empty()) {
      const char* token = std::getenv(config.token_env.c_str());
      if (token == nullptr || *token == '\0') {
        fail(ErrorCode::kConfig, "environment variable " + config.token_env + " holding the annotator token is not set");
      }
      token_ = token;
    }
  }

  std::string complete(const nlohmann::json& messages) {
    nlohmann::json body{{"model", config_.model}, {"messages", messages}, {"temperature", 0}};
    const std::string payload = body.dump();
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    double wait = config_.backoff_seconds;
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        ++retries_;
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
        wait *= 2;
      }
      httplib::Client client(endpoint_.origin);
      const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      auto res = client.Post(endpoint_.path + "/chat/completions", headers, payload, "application/json");
      if (!res) {
        last_error = "connection failed (" + httplib::to_string(res.error()) + ")";
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        fail(ErrorCode::kAnnotation, "claim " + claim_id_ + ": annotator returned HTTP " + std::to_string(res->status));
      }
      try {
        return nlohmann::json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kAnnotation, "claim " + claim_id_ + ": malformed annotator response: " + e.what());
      }
    }
    fail(ErrorCode::kAnnotation, "claim " + claim_id_ + ": annotator unreachable after " +
                                     std::to_string(config_.max_retries) + " retries: " + last_error);
  }

  int retries() const { return retries_; }

 private:
  const RemoteAnnotatorConfig& config_;
  std::string claim_id_;
  Endpoint endpoint_;
  std::string token_;
  int retries_ = 0;
};

}  // namespace

RemoteLabel remote_label(const std::string& claim, const std::string& context, const RemoteAnnotatorConfig& config,
                         const std::string& claim_id) {
  config.validate();
  ChatClient client(config, claim_id);
  RemoteLabel out;
  nlohmann::json messages = nlohmann::json::array();
  messages.push_back({{"role", "system"},
                      {"content", "You check claims against reference facts. A claim is supported if the facts "
                                  "confirm it, unsupported if they contradict it or lack it, and unknown if it "
                                  "states nothing checkable."}});
  messages.push_back({{"role", "user"},
                      {"content", "Reference facts: " + context + "\nClaim: " + claim +
                                      "\nReason step by step about whether the claim is supported."}});
  out.rationale = client.complete(messages);
  messages.push_back({{"role", "assistant"}, {"content", out.rationale}});
  messages.push_back({{"role", "user"},
                      {"content", "Answer with exactly one word: supported, unsupported, or unknown."}});
  out.summary = client.complete(messages);
  bool recognized = false;
  out.label = map_verdict(out.summary, &recognized);
  if (!recognized) spdlog::warn("claim {}: unmappable annotator verdict '{}', labelled unknown", claim_id, out.summary);
  out.retries = client.retries();
  if (out.retries > 0) spdlog::info("claim {}: annotated after {} retries", claim_id, out.retries);
  return out;
}

}  // namespace uq::data
