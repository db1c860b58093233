#include "vgkit/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <tuple>

#include "json_util.hpp"
#include "vgkit/errors.hpp"

namespace vgkit {

void GrpoConfig::validate() const {
  if (group_size < 2) throw ValidationError("group_size must be >= 2");
  if (!(clip_eps > 0 && clip_eps < 1)) throw ValidationError("clip_eps must be in (0, 1)");
  if (!(kl_beta >= 0) || !std::isfinite(kl_beta)) throw ValidationError("kl_beta must be >= 0");
  if (!(advantage_eps >= 0) || !std::isfinite(advantage_eps)) {
    throw ValidationError("advantage_eps must be >= 0");
  }
}

std::vector<double> group_advantages(std::span<const double> rewards, const GrpoConfig& cfg) {
  if (rewards.size() != static_cast<std::size_t>(cfg.group_size)) {
    throw ArgumentError("group_advantages: expected " + std::to_string(cfg.group_size) +
                        " rewards, got " + std::to_string(rewards.size()));
  }
  for (double r : rewards) {
    if (!std::isfinite(r)) throw ArgumentError("group_advantages: non-finite reward");
  }
  std::vector<double> adv(rewards.size(), 0.0);
  const bool all_equal =
      std::adjacent_find(rewards.begin(), rewards.end(), std::not_equal_to<>()) == rewards.end();
  if (all_equal) return adv;

  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double sq = 0.0;
  for (double r : rewards) sq += (r - mean) * (r - mean);
  const double std_dev = std::sqrt(sq / n);
  const double denom = std_dev + cfg.advantage_eps;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

void TokenLogProbs::validate() const {
  if (policy.empty()) throw ArgumentError("token log-probs: empty sequence");
  if (old_policy.size() != policy.size() || reference.size() != policy.size()) {
    throw ArgumentError("token log-probs: policy/old/reference lengths differ");
  }
  for (const auto* seq : {&policy, &old_policy, &reference}) {
    for (double v : *seq) {
      if (!std::isfinite(v)) throw ArgumentError("token log-probs: non-finite value");
      if (v > 0) throw ArgumentError("token log-probs: log-probability above 0");
    }
  }
}

namespace {

// Caps |log ratio| so exp() stays far from overflow; the surrogate and KL
// terms remain finite for any finite log-probabilities.
constexpr double kMaxLogRatio = 300.0;

double capped(double log_ratio) { return std::clamp(log_ratio, -kMaxLogRatio, kMaxLogRatio); }

}  // namespace

SurrogateResult surrogate_objective(double advantage, const TokenLogProbs& lp, const GrpoConfig& cfg) {
  lp.validate();
  if (!std::isfinite(advantage)) throw ArgumentError("surrogate_objective: non-finite advantage");
  SurrogateResult out;
  out.tokens.reserve(lp.policy.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < lp.policy.size(); ++t) {
    TokenTerm term;
    term.ratio = std::exp(capped(lp.policy[t] - lp.old_policy[t]));
    term.clipped_ratio = std::clamp(term.ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    term.surrogate = advantage == 0.0 ? 0.0
                                      : std::min(term.ratio * advantage, term.clipped_ratio * advantage);
    // r - ln r - 1 = expm1(d) - d with d = ln r; never negative, zero iff d == 0.
    const double d = capped(lp.reference[t] - lp.policy[t]);
    term.kl = std::max(0.0, std::expm1(d) - d);
    acc += term.surrogate - cfg.kl_beta * term.kl;
    out.tokens.push_back(term);
  }
  out.contribution = cfg.token_aggregation == TokenAggregation::kMean
                         ? acc / static_cast<double>(lp.policy.size())
                         : acc;
  return out;
}

std::vector<double> RolloutGroup::rewards() const {
  std::vector<double> r;
  r.reserve(responses.size());
  for (const auto& resp : responses) r.push_back(resp.reward);
  return r;
}

void RolloutGroup::assign_advantages(const GrpoConfig& cfg) {
  const auto adv = group_advantages(rewards(), cfg);
  for (std::size_t i = 0; i < responses.size(); ++i) responses[i].advantage = adv[i];
}

double group_objective(const RolloutGroup& group, std::span<const TokenLogProbs> lps, const GrpoConfig& cfg) {
  if (group.responses.size() != lps.size()) {
    throw ArgumentError("group_objective: " + std::to_string(group.responses.size()) +
                        " responses but " + std::to_string(lps.size()) + " log-prob sequences");
  }
  if (lps.empty()) throw ArgumentError("group_objective: empty group");
  double sum = 0.0;
  for (std::size_t i = 0; i < lps.size(); ++i) {
    sum += surrogate_objective(group.responses[i].advantage, lps[i], cfg).contribution;
  }
  return sum / static_cast<double>(lps.size());
}

// ---------------------------------------------------------------- batches

namespace {

void check_complete(const RolloutGroup& g, int n) {
  std::set<int> seen;
  for (const auto& r : g.responses) {
    if (r.index < 0 || r.index >= n) {
      throw ValidationError("group '" + g.prompt_id + "': response index " + std::to_string(r.index) +
                            " outside [0, " + std::to_string(n) + ")");
    }
    if (!seen.insert(r.index).second) {
      throw ValidationError("group '" + g.prompt_id + "': duplicate response " + std::to_string(r.index));
    }
  }
  std::string missing;
  for (int i = 0; i < n; ++i) {
    if (!seen.count(i)) missing += (missing.empty() ? "" : ", ") + std::to_string(i);
  }
  if (!missing.empty()) {
    throw ValidationError("group '" + g.prompt_id + "': missing response " + missing);
  }
}

}  // namespace

std::vector<BatchRecord> make_training_batch(std::span<const RolloutGroup> groups, const GrpoConfig& cfg) {
  cfg.validate();
  std::set<std::string> ids;
  std::vector<BatchRecord> batch;
  for (const auto& g : groups) {
    check_complete(g, cfg.group_size);
    if (!ids.insert(g.prompt_id).second) {
      throw ValidationError("duplicate group prompt_id '" + g.prompt_id + "'");
    }
    for (const auto& r : g.responses) {
      batch.push_back(BatchRecord{g.prompt_id, r.index, r.raw_text, r.reward, r.advantage, g.gt});
    }
  }
  std::sort(batch.begin(), batch.end(), [](const BatchRecord& a, const BatchRecord& b) {
    return std::tie(a.prompt_id, a.response_index) < std::tie(b.prompt_id, b.response_index);
  });
  return batch;
}

std::string serialize_batch(std::span<const BatchRecord> batch) {
  using detail::format_double17;
  std::string out;
  for (const auto& r : batch) {
    out += "{\"version\":" + std::to_string(kBatchSchemaVersion);
    out += ",\"prompt_id\":" + detail::dump_json(r.prompt_id);
    out += ",\"response_index\":" + std::to_string(r.response_index);
    out += ",\"raw_text\":" + detail::dump_json(r.raw_text);
    out += ",\"reward\":" + format_double17(r.reward);
    out += ",\"advantage\":" + format_double17(r.advantage);
    out += ",\"gt\":{\"explicit\":" + detail::dump_json(r.gt.explicit_gt);
    out += ",\"box\":[" + format_double17(r.gt.gt_box.x1) + "," + format_double17(r.gt.gt_box.y1) + "," +
           format_double17(r.gt.gt_box.x2) + "," + format_double17(r.gt.gt_box.y2) + "]}}\n";
  }
  return out;
}

std::vector<BatchRecord> parse_batch(std::string_view text) {
  std::vector<BatchRecord> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const Json j = Json::parse(line);
      if (detail::get_int(j, "version") != kBatchSchemaVersion) {
        throw ValidationError("unsupported batch schema version");
      }
      BatchRecord r;
      r.prompt_id = detail::get_string(j, "prompt_id");
      r.response_index = static_cast<int>(detail::get_int(j, "response_index"));
      r.raw_text = detail::get_string(j, "raw_text");
      r.reward = detail::get_double(j, "reward");
      r.advantage = detail::get_double(j, "advantage");
      const Json& gt = detail::require_field(j, "gt");
      r.gt.explicit_gt = detail::get_string(gt, "explicit");
      r.gt.gt_box = box_from_json(detail::require_field(gt, "box"));
      out.push_back(std::move(r));
    } catch (const Json::exception& e) {
      throw ValidationError("batch line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("batch line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------- groups file

Json to_json(const RolloutGroup& g) {
  Json j;
  j["prompt_id"] = g.prompt_id;
  j["gt"] = Json{{"explicit", g.gt.explicit_gt}, {"box", to_json(g.gt.gt_box)}};
  Json responses = Json::array();
  for (const auto& r : g.responses) {
    Json jr;
    jr["index"] = r.index;
    jr["raw_text"] = r.raw_text;
    jr["reward"] = r.reward;
    jr["advantage"] = r.advantage;
    if (r.breakdown) jr["breakdown"] = to_json(*r.breakdown);
    responses.push_back(std::move(jr));
  }
  j["responses"] = std::move(responses);
  return j;
}

RolloutGroup group_from_json(const Json& j) {
  RolloutGroup g;
  g.prompt_id = detail::get_string(j, "prompt_id");
  const Json& gt = detail::require_field(j, "gt");
  g.gt.explicit_gt = detail::get_string(gt, "explicit");
  g.gt.gt_box = box_from_json(detail::require_field(gt, "box"));
  const Json& responses = detail::require_field(j, "responses");
  if (!responses.is_array()) throw ValidationError("field 'responses' must be an array");
  for (const Json& jr : responses) {
    RolloutResponse r;
    r.index = static_cast<int>(detail::get_int(jr, "index"));
    r.raw_text = detail::get_string(jr, "raw_text");
    r.reward = detail::get_double(jr, "reward");
    r.advantage = detail::get_double(jr, "advantage");
    if (auto it = jr.find("breakdown"); it != jr.end() && !it->is_null()) {
      r.breakdown = breakdown_from_json(*it);
    }
    g.responses.push_back(std::move(r));
  }
  return g;
}

std::string serialize_groups(std::span<const RolloutGroup> groups) {
  std::string out;
  for (const auto& g : groups) {
    out += detail::dump_json(to_json(g));
    out += '\n';
  }
  return out;
}

std::vector<RolloutGroup> parse_groups(std::string_view text) {
  std::vector<RolloutGroup> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(group_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw ValidationError("groups line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("groups line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<RolloutGroup> load_groups(const std::filesystem::path& path) {
  return parse_groups(read_file(path));
}

}  // namespace vgkit
