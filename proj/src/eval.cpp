#include "vgkit/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include "vgkit/errors.hpp"
#include "vgkit/geom.hpp"

namespace vgkit {

double macro_average(const std::map<Category, double>& per_category) {
  if (per_category.empty()) throw ArgumentError("macro_average: no categories");
  double sum = 0.0;
  for (const auto& [cat, acc] : per_category) sum += acc;
  return sum / static_cast<double>(per_category.size());
}

AccuracySlice summarize_accuracy(std::span<const GroundingRecord> records, const std::vector<bool>& correct) {
  if (records.size() != correct.size()) throw ArgumentError("summarize_accuracy: size mismatch");
  if (records.empty()) throw ValidationError("empty dataset");
  AccuracySlice s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    s.n_per_category[records[i].category] += 1;
    s.correct_per_category[records[i].category] += correct[i] ? 1 : 0;
  }
  for (const auto& [cat, n] : s.n_per_category) {
    s.per_category_acc[cat] = static_cast<double>(s.correct_per_category[cat]) / static_cast<double>(n);
  }
  s.macro_avg = macro_average(s.per_category_acc);
  return s;
}

namespace {

using PredIndex = std::unordered_map<std::string, const Prediction*>;

PredIndex index_predictions(std::span<const Prediction> preds, std::optional<QueryKind> kind,
                            std::string_view label) {
  PredIndex idx;
  std::optional<QueryKind> seen_kind;
  for (const Prediction& p : preds) {
    if (kind) {
      if (p.query_kind != *kind) continue;
    } else {
      if (seen_kind && *seen_kind != p.query_kind) {
        throw ValidationError(std::string(label) + ": predictions mix explicit and implicit queries; "
                              "select one query kind");
      }
      seen_kind = p.query_kind;
    }
    if (!idx.emplace(p.record_id, &p).second) {
      throw ValidationError(std::string(label) + ": duplicate prediction for '" + p.record_id + "' (" +
                            std::string(to_string(p.query_kind)) + ")");
    }
  }
  return idx;
}

// Paired protocols take one file per query kind; a file of the other kind is a mix-up.
PredIndex index_kind(std::span<const Prediction> preds, QueryKind kind, std::string_view label) {
  for (const Prediction& p : preds) {
    if (p.query_kind != kind) {
      throw ValidationError(std::string(label) + ": record '" + p.record_id + "' has query_kind " +
                            std::string(to_string(p.query_kind)) + ", expected " + std::string(to_string(kind)));
    }
  }
  return index_predictions(preds, kind, label);
}

void check_known_ids(const PredIndex& idx, std::span<const GroundingRecord> records, std::string_view label) {
  std::unordered_map<std::string, bool> known;
  for (const auto& r : records) known.emplace(r.id, true);
  std::vector<std::string> unknown;
  for (const auto& [id, p] : idx) {
    if (!known.count(id)) unknown.push_back(id);
  }
  if (!unknown.empty()) {
    std::sort(unknown.begin(), unknown.end());
    std::string msg = std::string(label) + ": predictions for unknown record ids:";
    for (const auto& id : unknown) msg += " " + id;
    throw ValidationError(msg);
  }
}

bool box_hit(const PredIndex& idx, const GroundingRecord& r, double thr) {
  auto it = idx.find(r.id);
  if (it == idx.end() || !it->second->box) return false;
  return box_iou(*it->second->box, r.gt_box) > thr;
}

void check_same_coverage(const PredIndex& a, const PredIndex& b) {
  std::vector<std::string> only_a, only_b;
  for (const auto& [id, p] : a) {
    if (!b.count(id)) only_a.push_back(id);
  }
  for (const auto& [id, p] : b) {
    if (!a.count(id)) only_b.push_back(id);
  }
  if (only_a.empty() && only_b.empty()) return;
  std::sort(only_a.begin(), only_a.end());
  std::sort(only_b.begin(), only_b.end());
  std::string msg = "prediction coverage mismatch;";
  if (!only_b.empty()) {
    msg += " missing explicit predictions for:";
    for (const auto& id : only_b) msg += " " + id;
    msg += ";";
  }
  if (!only_a.empty()) {
    msg += " missing implicit predictions for:";
    for (const auto& id : only_a) msg += " " + id;
  }
  throw ValidationError(msg);
}

}  // namespace

AccuracySlice acc_at_iou(std::span<const Prediction> preds, std::span<const GroundingRecord> records, double thr,
                         std::optional<QueryKind> kind) {
  const PredIndex idx = index_predictions(preds, kind, "acc_at_iou");
  check_known_ids(idx, records, "acc_at_iou");
  std::vector<bool> correct;
  correct.reserve(records.size());
  for (const auto& r : records) correct.push_back(box_hit(idx, r, thr));
  return summarize_accuracy(records, correct);
}

AccuracySlice hard_protocol(std::span<const Prediction> preds_explicit, std::span<const Prediction> preds_implicit,
                            std::span<const GroundingRecord> records, double thr) {
  const PredIndex ex = index_kind(preds_explicit, QueryKind::kExplicit, "explicit predictions");
  const PredIndex im = index_kind(preds_implicit, QueryKind::kImplicit, "implicit predictions");
  check_same_coverage(ex, im);
  check_known_ids(ex, records, "hard_protocol");
  std::vector<bool> correct;
  correct.reserve(records.size());
  for (const auto& r : records) correct.push_back(box_hit(ex, r, thr) && box_hit(im, r, thr));
  return summarize_accuracy(records, correct);
}

double consistency(std::span<const Prediction> preds_explicit, std::span<const Prediction> preds_implicit,
                   double thr) {
  const PredIndex ex = index_kind(preds_explicit, QueryKind::kExplicit, "explicit predictions");
  const PredIndex im = index_kind(preds_implicit, QueryKind::kImplicit, "implicit predictions");
  check_same_coverage(ex, im);
  if (ex.empty()) throw ValidationError("consistency: no predictions");
  std::size_t agree = 0;
  for (const auto& [id, pe] : ex) {
    const Prediction* pi = im.at(id);
    if (pe->box && pi->box && box_iou(*pe->box, *pi->box) >= thr) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(ex.size());
}

PixelMetrics mask_metrics(std::span<const MaskSample> samples, double thr) {
  if (samples.empty()) throw ValidationError("mask_metrics: no samples");
  PixelMetrics m;
  m.n = samples.size();
  double iou_sum = 0.0;
  std::size_t inter_sum = 0, union_sum = 0, hits = 0;
  for (const MaskSample& s : samples) {
    MaskOverlap o;
    try {
      o = mask_overlap(s.pred, s.gt);
    } catch (const ArgumentError& e) {
      throw ValidationError("mask_metrics: sample '" + s.id + "': " + e.what());
    }
    const double iou = o.union_ == 0 ? 1.0 : static_cast<double>(o.intersection) / static_cast<double>(o.union_);
    iou_sum += iou;
    inter_sum += o.intersection;
    union_sum += o.union_;
    if (iou > thr) ++hits;
  }
  m.miou = iou_sum / static_cast<double>(samples.size());
  m.oiou = union_sum == 0 ? 1.0 : static_cast<double>(inter_sum) / static_cast<double>(union_sum);
  m.acc05 = static_cast<double>(hits) / static_cast<double>(samples.size());
  return m;
}

std::vector<MaskSample> build_mask_samples(std::span<const Prediction> preds,
                                           std::span<const GroundingRecord> records,
                                           std::optional<QueryKind> kind) {
  const PredIndex idx = index_predictions(preds, kind, "mask_metrics");
  check_known_ids(idx, records, "mask_metrics");
  std::vector<MaskSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    RasterMask gt = rasterize(r.gt_mask, r.image_w, r.image_h);
    RasterMask pred(r.image_w, r.image_h);
    auto it = idx.find(r.id);
    if (it != idx.end() && it->second->mask) {
      const RasterMask& m = *it->second->mask;
      if (m.width() != r.image_w || m.height() != r.image_h) {
        throw ValidationError("mask_metrics: sample '" + r.id + "': predicted mask is " +
                              std::to_string(m.width()) + "x" + std::to_string(m.height()) + ", image is " +
                              std::to_string(r.image_w) + "x" + std::to_string(r.image_h));
      }
      pred = m;
    }
    out.push_back(MaskSample{r.id, std::move(pred), std::move(gt)});
  }
  return out;
}

CoverageHistogram coverage_histogram(std::span<const double> ratios) {
  if (ratios.empty()) throw ValidationError("empty dataset");
  CoverageHistogram h;
  h.n = ratios.size();
  std::array<std::size_t, 3> below{};
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ArgumentError("coverage ratio outside [0, 1]");
    for (std::size_t t = 0; t < kCoverageThresholds.size(); ++t) {
      if (r < kCoverageThresholds[t]) ++below[t];
    }
    std::size_t bin = h.decade_counts.size() - 1;
    for (std::size_t b = 0; b + 1 < kCoverageDecadeEdges.size(); ++b) {
      if (r < kCoverageDecadeEdges[b + 1]) {
        bin = b;
        break;
      }
    }
    ++h.decade_counts[bin];
  }
  for (std::size_t t = 0; t < below.size(); ++t) {
    h.cumulative_share[t] = static_cast<double>(below[t]) / static_cast<double>(h.n);
  }
  return h;
}

CoverageHistogram coverage_histogram(std::span<const GroundingRecord> records) {
  if (records.empty()) throw ValidationError("empty dataset");
  std::vector<double> ratios;
  ratios.reserve(records.size());
  for (const auto& r : records) ratios.push_back(coverage_ratio(rasterize(r.gt_mask, r.image_w, r.image_h)));
  return coverage_histogram(ratios);
}

// ---------------------------------------------------------------- report

namespace {

Json slice_json(const AccuracySlice& s) {
  Json per = Json::object();
  Json n = Json::object();
  for (Category c : kAllCategories) {
    if (auto it = s.per_category_acc.find(c); it != s.per_category_acc.end()) {
      per[std::string(to_string(c))] = it->second;
      n[std::string(to_string(c))] = s.n_per_category.at(c);
    }
  }
  Json j;
  j["per_category_acc"] = std::move(per);
  j["n_per_category"] = std::move(n);
  j["macro_avg"] = s.macro_avg;
  return j;
}

}  // namespace

Json to_json(const EvalReport& r) {
  Json j;
  j["version"] = kReportSchemaVersion;
  j["metadata"] = Json{{"dataset_sha256", r.dataset_sha256}, {"config", r.config}};
  if (r.accuracy) j["accuracy"] = slice_json(*r.accuracy);
  if (r.hard) j["hard"] = slice_json(*r.hard);
  if (r.consistency) j["consistency"] = *r.consistency;
  if (r.pixel) {
    j["pixel"] = Json{{"miou", r.pixel->miou}, {"oiou", r.pixel->oiou}, {"acc05", r.pixel->acc05},
                      {"n", r.pixel->n}};
  }
  if (r.coverage) {
    Json cum = Json::object();
    for (std::size_t t = 0; t < kCoverageThresholds.size(); ++t) {
      char key[32];
      std::snprintf(key, sizeof(key), "below_%g", kCoverageThresholds[t]);
      cum[key] = r.coverage->cumulative_share[t];
    }
    Json bins = Json::array();
    for (std::size_t b = 0; b < r.coverage->decade_counts.size(); ++b) {
      bins.push_back(Json{{"lo", kCoverageDecadeEdges[b]},
                          {"hi", kCoverageDecadeEdges[b + 1]},
                          {"count", r.coverage->decade_counts[b]}});
    }
    j["coverage"] = Json{{"n", r.coverage->n}, {"cumulative", std::move(cum)}, {"decades", std::move(bins)}};
  }
  return j;
}

std::string format_grid(const AccuracySlice& slice, std::string_view row_label) {
  static constexpr const char* kHeaders[] = {"Traffic", "Disaster", "Security", "Sport", "Social", "Productive"};
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-16s", "");
  out << buf;
  for (const char* h : kHeaders) {
    std::snprintf(buf, sizeof(buf), "%11s", h);
    out << buf;
  }
  out << "        AVG\n";
  std::snprintf(buf, sizeof(buf), "%-16.16s", std::string(row_label).c_str());
  out << buf;
  for (Category c : kAllCategories) {
    auto it = slice.per_category_acc.find(c);
    if (it == slice.per_category_acc.end()) {
      std::snprintf(buf, sizeof(buf), "%11s", "-");
    } else {
      std::snprintf(buf, sizeof(buf), "%10.2f%%", it->second * 100.0);
    }
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "%10.2f%%\n", slice.macro_avg * 100.0);
  out << buf;
  return out.str();
}

}  // namespace vgkit
