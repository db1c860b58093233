#include "vgkit/reward.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>
#include <vector>

#include "json_util.hpp"
#include "vgkit/errors.hpp"

namespace vgkit {

// ---------------------------------------------------------------- config

void RewardConfig::validate() const {
  if (!(iou_threshold > 0 && iou_threshold <= 1)) throw ValidationError("iou_threshold must be in (0, 1]");
  if (!(sim_threshold > 0 && sim_threshold <= 1)) throw ValidationError("sim_threshold must be in (0, 1]");
  if (!(l1_threshold_px > 0) || !std::isfinite(l1_threshold_px)) {
    throw ValidationError("l1_threshold_px must be positive");
  }
  for (auto [name, w] : {std::pair{"w_format", w_format}, std::pair{"w_perception", w_perception},
                         std::pair{"w_reasoning", w_reasoning}}) {
    if (!(w >= 0) || !std::isfinite(w)) throw ValidationError(std::string(name) + " must be >= 0");
  }
  if (ngram_n < 1) throw ValidationError("ngram_n must be >= 1");
}

namespace {

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("expected a boolean, got '" + std::string(v) + "'");
}

double parse_real(std::string_view key, std::string_view v) {
  double d = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), d);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ValidationError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return d;
}

L1Reduction parse_reduction(std::string_view v) {
  if (v == "mean") return L1Reduction::kMean;
  if (v == "sum") return L1Reduction::kSum;
  throw ValidationError("l1_reduction must be 'mean' or 'sum'");
}

JaccardMode parse_jaccard_mode(std::string_view v) {
  if (v == "words") return JaccardMode::kWords;
  if (v == "char_ngrams") return JaccardMode::kCharNgrams;
  throw ValidationError("jaccard_mode must be 'words' or 'char_ngrams'");
}

}  // namespace

void RewardConfig::set(std::string_view key, std::string_view value) {
  if (key == "iou_threshold") iou_threshold = parse_real(key, value);
  else if (key == "l1_threshold_px") l1_threshold_px = parse_real(key, value);
  else if (key == "sim_threshold") sim_threshold = parse_real(key, value);
  else if (key == "w_format") w_format = parse_real(key, value);
  else if (key == "w_perception") w_perception = parse_real(key, value);
  else if (key == "w_reasoning") w_reasoning = parse_real(key, value);
  else if (key == "enable_format") enable_format = parse_bool(value);
  else if (key == "enable_perception") enable_perception = parse_bool(value);
  else if (key == "enable_reasoning") enable_reasoning = parse_bool(value);
  else if (key == "l1_reduction") l1_reduction = parse_reduction(value);
  else if (key == "jaccard_mode") jaccard_mode = parse_jaccard_mode(value);
  else if (key == "ngram_n") {
    const double n = parse_real(key, value);
    if (n != std::floor(n) || n < 1 || n > 64) throw ValidationError("ngram_n must be an integer in [1, 64]");
    ngram_n = static_cast<int>(n);
  }
  else throw ValidationError("unknown reward config key '" + std::string(key) + "'");
}

RewardConfig RewardConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("reward config must be a JSON object");
  RewardConfig cfg;
  for (const auto& [key, v] : j.items()) {
    std::string text;
    if (v.is_string()) text = v.get<std::string>();
    else if (v.is_boolean()) text = v.get<bool>() ? "true" : "false";
    else if (v.is_number()) text = detail::format_double17(v.get<double>());
    else throw ValidationError("reward config '" + key + "' has an unsupported type");
    cfg.set(key, text);
  }
  cfg.validate();
  return cfg;
}

RewardConfig RewardConfig::load(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what());
  }
  return from_json(j);
}

Json RewardConfig::to_json() const {
  Json j;
  j["iou_threshold"] = iou_threshold;
  j["l1_threshold_px"] = l1_threshold_px;
  j["sim_threshold"] = sim_threshold;
  j["w_format"] = w_format;
  j["w_perception"] = w_perception;
  j["w_reasoning"] = w_reasoning;
  j["enable_format"] = enable_format;
  j["enable_perception"] = enable_perception;
  j["enable_reasoning"] = enable_reasoning;
  j["l1_reduction"] = l1_reduction == L1Reduction::kMean ? "mean" : "sum";
  j["jaccard_mode"] = jaccard_mode == JaccardMode::kWords ? "words" : "char_ngrams";
  j["ngram_n"] = ngram_n;
  return j;
}

// ---------------------------------------------------------------- rewards

FormatReward format_reward(const ParsedResponse& p) {
  FormatReward r;
  r.overall = p.overall_format_ok ? 1 : 0;
  r.box = p.box_format_ok ? 1 : 0;
  r.combined = (r.overall + r.box) / 2.0;
  return r;
}

PerceptionReward perception_reward(const std::optional<Box>& pred, const Box& gt,
                                   const RewardConfig& cfg) {
  PerceptionReward r;
  if (!pred || !pred->is_valid()) return r;
  r.iou = box_iou(*pred, gt);
  r.l1 = box_l1(*pred, gt, cfg.l1_reduction);
  r.iou_reward = r.iou > cfg.iou_threshold ? 1 : 0;
  r.l1_reward = *r.l1 < cfg.l1_threshold_px ? 1 : 0;
  r.combined = (r.iou_reward + r.l1_reward) / 2.0;
  return r;
}

namespace {

std::string normalize_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    out.push_back(std::isspace(c) ? ' ' : static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  const std::string norm = normalize_text(s);
  std::size_t i = 0;
  while (i < norm.size()) {
    while (i < norm.size() && norm[i] == ' ') ++i;
    std::size_t j = i;
    while (j < norm.size() && norm[j] != ' ') ++j;
    if (j > i) out.push_back(norm.substr(i, j - i));
    i = j;
  }
  return out;
}

std::set<std::string> word_set(std::string_view s) {
  auto w = words(s);
  return {w.begin(), w.end()};
}

// Overlapping character n-grams of the normalized text (words joined by one space).
std::set<std::string> ngram_set(std::string_view s, int n) {
  std::string joined;
  for (const std::string& w : words(s)) {
    if (!joined.empty()) joined.push_back(' ');
    joined += w;
  }
  std::set<std::string> grams;
  if (joined.empty()) return grams;
  const auto len = static_cast<std::size_t>(n);
  if (joined.size() <= len) {
    grams.insert(joined);
    return grams;
  }
  for (std::size_t i = 0; i + len <= joined.size(); ++i) grams.insert(joined.substr(i, len));
  return grams;
}

}  // namespace

double jaccard_similarity(std::string_view a, std::string_view b, JaccardMode mode, int ngram_n) {
  const auto sa = mode == JaccardMode::kWords ? word_set(a) : ngram_set(a, ngram_n);
  const auto sb = mode == JaccardMode::kWords ? word_set(b) : ngram_set(b, ngram_n);
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

ReasoningReward reasoning_reward(const std::optional<std::string>& explicit_pred,
                                 std::string_view explicit_gt, const RewardConfig& cfg) {
  if (explicit_gt.empty()) throw ArgumentError("reasoning_reward: explicit reference must be non-empty");
  ReasoningReward r;
  if (!explicit_pred) return r;
  r.similarity = jaccard_similarity(*explicit_pred, explicit_gt, cfg.jaccard_mode, cfg.ngram_n);
  r.reward = r.similarity > cfg.sim_threshold ? 1 : 0;
  return r;
}

RewardBreakdown total_reward(const ParsedResponse& parsed, const GroundingRecord& gt, CoordMode coord,
                             const RewardConfig& cfg) {
  RewardBreakdown out;

  const FormatReward fmt = format_reward(parsed);
  out.format_overall = fmt.overall;
  out.format_box = fmt.box;

  if (const RawBox* raw = parsed.first_box()) {
    try {
      out.pred_box = to_box(*raw, coord, gt.image_w, gt.image_h);
    } catch (const ConversionError&) {
      out.pred_box.reset();
    }
  }
  const PerceptionReward per = perception_reward(out.pred_box, gt.gt_box, cfg);
  out.iou_reward = per.iou_reward;
  out.l1_reward = per.l1_reward;
  out.iou = per.iou;
  out.l1 = per.l1;

  const ReasoningReward rea = reasoning_reward(parsed.explicit_ref, gt.explicit_query, cfg);
  out.similarity = rea.similarity;
  out.reasoning_reward = rea.reward;

  out.format_component = cfg.enable_format ? cfg.w_format * fmt.combined : 0.0;
  out.perception_component = cfg.enable_perception ? cfg.w_perception * per.combined : 0.0;
  out.reasoning_component = cfg.enable_reasoning ? cfg.w_reasoning * rea.reward : 0.0;
  out.total = out.format_component + out.perception_component + out.reasoning_component;
  return out;
}

Json to_json(const RewardBreakdown& r) {
  Json j;
  j["format_overall"] = r.format_overall;
  j["format_box"] = r.format_box;
  j["iou_reward"] = r.iou_reward;
  j["l1_reward"] = r.l1_reward;
  j["reasoning_reward"] = r.reasoning_reward;
  j["similarity"] = r.similarity;
  j["iou"] = r.iou;
  j["l1"] = r.l1 ? Json(*r.l1) : Json(nullptr);
  j["pred_box"] = r.pred_box ? to_json(*r.pred_box) : Json(nullptr);
  j["format"] = r.format_component;
  j["perception"] = r.perception_component;
  j["reasoning"] = r.reasoning_component;
  j["total"] = r.total;
  return j;
}

RewardBreakdown breakdown_from_json(const Json& j) {
  auto flag = [&](std::string_view key) {
    const long long v = detail::get_int(j, key);
    if (v != 0 && v != 1) throw ValidationError("field '" + std::string(key) + "' must be 0 or 1");
    return static_cast<int>(v);
  };
  RewardBreakdown r;
  r.format_overall = flag("format_overall");
  r.format_box = flag("format_box");
  r.iou_reward = flag("iou_reward");
  r.l1_reward = flag("l1_reward");
  r.reasoning_reward = flag("reasoning_reward");
  r.similarity = detail::get_double(j, "similarity");
  r.iou = detail::get_double(j, "iou");
  if (auto it = j.find("l1"); it != j.end() && !it->is_null()) r.l1 = detail::as_finite_number(*it, "l1");
  if (auto it = j.find("pred_box"); it != j.end() && !it->is_null()) r.pred_box = box_from_json(*it);
  r.format_component = detail::get_double(j, "format");
  r.perception_component = detail::get_double(j, "perception");
  r.reasoning_component = detail::get_double(j, "reasoning");
  r.total = detail::get_double(j, "total");
  return r;
}

}  // namespace vgkit
