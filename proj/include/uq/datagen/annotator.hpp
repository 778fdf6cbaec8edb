#pragma once

#include <string>

#include "uq/datagen/claims.hpp"

namespace uq::data {

/// OpenAI-compatible chat-completions endpoint. The bearer token is read
/// from the environment variable named by token_env, never from config.
struct RemoteAnnotatorConfig {
  std::string endpoint;  // base URL, e.g. http://localhost:8000/v1
  std::string model;
  std::string token_env;  // empty: no Authorization header
  int max_retries = 3;
  double timeout_seconds = 30.0;
  double backoff_seconds = 0.5;  // doubled after every failed attempt
  std::size_t max_in_flight = 4;

  void validate() const;
};

struct RemoteLabel {
  Label label = Label::kUnknown;
  int retries = 0;
  std::string rationale;  // stage-1 answer
  std::string summary;    // stage-2 answer
};

/// Maps a one-word verdict onto a label; `recognized` is false for anything
/// outside {supported, unsupported, unknown}, which maps to unknown.
Label map_verdict(const std::string& word, bool* recognized = nullptr);

/// Two chat requests: a step-by-step assessment of the claim against the
/// context, then a one-word summary of that assessment. Connection errors,
/// 429 and 5xx are retried with exponential backoff; other failures and
/// exhausted retries raise kAnnotation naming the claim.
RemoteLabel remote_label(const std::string& claim, const std::string& context, const RemoteAnnotatorConfig& config,
                         const std::string& claim_id);

}  // namespace uq::data
