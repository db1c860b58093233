#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vgkit/core.hpp"
#include "vgkit/grpo.hpp"
#include "vgkit/http.hpp"
#include "vgkit/parse.hpp"
#include "vgkit/reward.hpp"

namespace vgkit {

struct InferenceEndpoint {
  HttpEndpoint http;
  std::string model = "default";
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 1024;
  int max_in_flight = 4;

  void validate() const;
};

struct GenerateResult {
  std::vector<std::string> texts;
  CallStats stats;
};

// Builds the chat-completions request body. The image ref, when non-empty,
// travels as an image_url content part ahead of the text.
Json make_chat_request(const InferenceEndpoint& ep, const std::string& prompt, int n, double temperature,
                       const std::string& image_ref = {});

// Returns exactly n completions in choice order; anything else is a ProtocolError.
std::vector<std::string> parse_chat_response(const Json& body, int n);

GenerateResult generate(const InferenceEndpoint& ep, const std::string& prompt, int n,
                        std::optional<double> temperature = std::nullopt, const std::string& image_ref = {});

struct RunSummary {
  std::size_t total = 0;
  std::size_t failed = 0;
  double max_failure_fraction = 0.1;
  bool threshold_breached() const {
    return total > 0 && static_cast<double>(failed) / static_cast<double>(total) > max_failure_fraction;
  }
};

struct RolloutJob {
  std::vector<GroundingRecord> records;
  PromptTemplate tpl = PromptTemplate::make(PromptKind::kI2e);
  CoordMode coord = CoordMode::kAbsolutePx;
  InferenceEndpoint endpoint;
  GrpoConfig grpo;
  RewardConfig reward;
  const TemplateSet* templates = nullptr;  // null = built-in
  std::filesystem::path groups_out;
  std::filesystem::path batch_out;
  std::filesystem::path errors_out;
  double max_failure_fraction = 0.1;

  void validate() const;
};

struct RolloutOutput {
  std::vector<RolloutGroup> groups;  // successful records, dataset order
  RunSummary summary;
};

// Scores N sampled replies per record: the prompt carries the implicit query,
// the reasoning reward compares against the explicit query.
RolloutGroup score_group(const GroundingRecord& rec, const std::vector<std::string>& texts,
                         const RolloutJob& job);

RolloutOutput run_rollout(const RolloutJob& job);

struct InferenceJob {
  std::vector<GroundingRecord> records;
  PromptTemplate tpl = PromptTemplate::make(PromptKind::kI2e);
  QueryKind query_kind = QueryKind::kImplicit;
  CoordMode coord = CoordMode::kAbsolutePx;
  InferenceEndpoint endpoint;
  const TemplateSet* templates = nullptr;
  std::filesystem::path preds_out;
  std::filesystem::path errors_out;
  double max_failure_fraction = 0.1;
};

struct InferenceOutput {
  std::vector<Prediction> predictions;
  RunSummary summary;
};

// One temperature-0 completion per record.
InferenceOutput run_inference(const InferenceJob& job);

Prediction make_prediction(const GroundingRecord& rec, QueryKind kind, std::string raw_text, PromptKind prompt_kind,
                           CoordMode coord);

// ---------------------------------------------------------------- mock server

struct MockRule {
  std::optional<std::string> contains;  // substring of the prompt text
  std::optional<int> index;             // 0-based request sequence number
  std::vector<std::string> replies;     // choice i gets replies[i % size]
  int fail_times = 0;                   // first k matches answer fail_status
  int fail_status = 503;
  int delay_ms = 0;
};

struct MockScript {
  bool strict = true;
  std::vector<MockRule> rules;
  std::vector<std::string> default_replies;  // used for unmatched requests when not strict

  static MockScript from_json(const Json& j);
  static MockScript load(const std::filesystem::path& path);
};

// Deterministic chat-completions server for tests and offline pipelines.
class MockInferenceServer {
 public:
  explicit MockInferenceServer(MockScript script, std::filesystem::path log_path = {});
  ~MockInferenceServer();
  MockInferenceServer(const MockInferenceServer&) = delete;
  MockInferenceServer& operator=(const MockInferenceServer&) = delete;

  // Binds and starts serving on a background thread; port 0 picks a free
  // port. Throws TransportError when the port cannot be bound.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Stops serving and writes the request log, if a log path was given.
  void stop();
  int port() const;
  std::string base_url() const;
  std::vector<Json> request_log() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vgkit
