#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vgkit/core.hpp"
#include "vgkit/reward.hpp"

namespace vgkit {

enum class TokenAggregation { kMean, kSum };

struct GrpoConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.04;
  double advantage_eps = 1e-8;
  TokenAggregation token_aggregation = TokenAggregation::kMean;

  void validate() const;
};

// Standardizes rewards within one group: (r - mean) / (population std + eps).
// A group whose rewards are all equal gets all-zero advantages.
std::vector<double> group_advantages(std::span<const double> rewards, const GrpoConfig& cfg);

// Per-token log-probabilities of one response under the current, sampling
// ("old") and reference policies.
struct TokenLogProbs {
  std::vector<double> policy;
  std::vector<double> old_policy;
  std::vector<double> reference;

  // Equal non-zero lengths, finite values, each <= 0. Throws ArgumentError.
  void validate() const;
};

struct TokenTerm {
  double ratio = 1.0;          // exp(policy - old)
  double clipped_ratio = 1.0;  // ratio clamped to [1 - eps, 1 + eps]
  double surrogate = 0.0;      // min(ratio * adv, clipped_ratio * adv)
  double kl = 0.0;             // r - ln r - 1 with r = exp(reference - policy)
};

struct SurrogateResult {
  double contribution = 0.0;  // aggregate over tokens of (surrogate - beta * kl)
  std::vector<TokenTerm> tokens;
};

SurrogateResult surrogate_objective(double advantage, const TokenLogProbs& lp, const GrpoConfig& cfg);

struct RolloutResponse {
  int index = 0;
  std::string raw_text;
  double reward = 0.0;
  double advantage = 0.0;
  std::optional<RewardBreakdown> breakdown;
};

struct GroundTruthSnapshot {
  std::string explicit_gt;
  Box gt_box;
};

struct RolloutGroup {
  std::string prompt_id;
  std::vector<RolloutResponse> responses;
  GroundTruthSnapshot gt;

  std::vector<double> rewards() const;
  // Recomputes every advantage from this group's rewards.
  void assign_advantages(const GrpoConfig& cfg);
};

// Mean over the N per-response contributions. Requires one TokenLogProbs per response.
double group_objective(const RolloutGroup& group, std::span<const TokenLogProbs> lps, const GrpoConfig& cfg);

inline constexpr int kBatchSchemaVersion = 1;

struct BatchRecord {
  std::string prompt_id;
  int response_index = 0;
  std::string raw_text;
  double reward = 0.0;
  double advantage = 0.0;
  GroundTruthSnapshot gt;
};

// Flattens complete groups into (prompt_id, response_index)-ordered records.
// Throws ValidationError("... missing response k ...") for incomplete groups.
std::vector<BatchRecord> make_training_batch(std::span<const RolloutGroup> groups, const GrpoConfig& cfg);

// One JSON object per line; reward and advantage carry 17 significant digits.
std::string serialize_batch(std::span<const BatchRecord> batch);
std::vector<BatchRecord> parse_batch(std::string_view text);

Json to_json(const RolloutGroup& g);
RolloutGroup group_from_json(const Json& j);
std::string serialize_groups(std::span<const RolloutGroup> groups);
std::vector<RolloutGroup> parse_groups(std::string_view text);
std::vector<RolloutGroup> load_groups(const std::filesystem::path& path);

}  // namespace vgkit
