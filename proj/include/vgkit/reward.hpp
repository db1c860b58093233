#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "vgkit/core.hpp"
#include "vgkit/geom.hpp"
#include "vgkit/parse.hpp"

namespace vgkit {

enum class JaccardMode { kWords, kCharNgrams };

struct RewardConfig {
  double iou_threshold = 0.5;    // IoU reward is [iou > threshold]
  double l1_threshold_px = 10.0; // L1 reward is [l1 < threshold]
  double sim_threshold = 0.9;    // reasoning reward is [similarity > threshold]
  double w_format = 1.0;
  double w_perception = 1.0;
  double w_reasoning = 0.5;
  bool enable_format = true;
  bool enable_perception = true;
  bool enable_reasoning = true;
  L1Reduction l1_reduction = L1Reduction::kMean;
  JaccardMode jaccard_mode = JaccardMode::kWords;
  int ngram_n = 3;

  void validate() const;

  // Flat JSON object with the field names above; unknown keys are rejected.
  static RewardConfig from_json(const Json& j);
  static RewardConfig load(const std::filesystem::path& path);
  Json to_json() const;
  // Applies one "key=value" override.
  void set(std::string_view key, std::string_view value);
};

struct FormatReward {
  int overall = 0;
  int box = 0;
  double combined = 0.0;
};

struct PerceptionReward {
  int iou_reward = 0;
  int l1_reward = 0;
  double combined = 0.0;
  double iou = 0.0;
  std::optional<double> l1;  // absent when no box was predicted
};

struct ReasoningReward {
  double similarity = 0.0;
  int reward = 0;
};

struct RewardBreakdown {
  int format_overall = 0;
  int format_box = 0;
  int iou_reward = 0;
  int l1_reward = 0;
  int reasoning_reward = 0;
  double similarity = 0.0;
  double iou = 0.0;
  std::optional<double> l1;
  std::optional<Box> pred_box;
  double format_component = 0.0;
  double perception_component = 0.0;
  double reasoning_component = 0.0;
  double total = 0.0;
};

FormatReward format_reward(const ParsedResponse& p);

// A missing prediction scores (0, 0, 0).
PerceptionReward perception_reward(const std::optional<Box>& pred, const Box& gt,
                                   const RewardConfig& cfg);

// Token-set Jaccard over normalized text (lowercase, ASCII punctuation removed).
// Two empty inputs have similarity 1.
double jaccard_similarity(std::string_view a, std::string_view b, JaccardMode mode = JaccardMode::kWords,
                          int ngram_n = 3);

ReasoningReward reasoning_reward(const std::optional<std::string>& explicit_pred,
                                 std::string_view explicit_gt, const RewardConfig& cfg);

// Scores a parsed reply against a record. The first extracted box is converted
// with to_box; conversion failures count as a missing box.
RewardBreakdown total_reward(const ParsedResponse& parsed, const GroundingRecord& gt, CoordMode coord,
                             const RewardConfig& cfg);

Json to_json(const RewardBreakdown& r);
RewardBreakdown breakdown_from_json(const Json& j);

}  // namespace vgkit
