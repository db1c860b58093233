#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vgkit/core.hpp"

namespace vgkit {

// Unweighted mean of the given per-category rates.
double macro_average(const std::map<Category, double>& per_category);

struct AccuracySlice {
  std::map<Category, double> per_category_acc;
  std::map<Category, int> n_per_category;
  std::map<Category, int> correct_per_category;
  double macro_avg = 0.0;
};

// Builds an AccuracySlice from per-record correctness flags, in record order.
AccuracySlice summarize_accuracy(std::span<const GroundingRecord> records, const std::vector<bool>& correct);

// Fraction of records whose prediction has IoU > thr with the ground truth.
// When `kind` is unset every prediction must carry the same query kind.
// Missing predictions count as wrong; unknown record ids and duplicates throw.
AccuracySlice acc_at_iou(std::span<const Prediction> preds, std::span<const GroundingRecord> records,
                         double thr = 0.5, std::optional<QueryKind> kind = std::nullopt);

// A record is correct only if both its explicit and implicit predictions beat thr.
AccuracySlice hard_protocol(std::span<const Prediction> preds_explicit,
                            std::span<const Prediction> preds_implicit,
                            std::span<const GroundingRecord> records, double thr = 0.5);

// Fraction of ids whose two predictions both exist and overlap with IoU >= thr.
double consistency(std::span<const Prediction> preds_explicit, std::span<const Prediction> preds_implicit,
                   double thr = 0.5);

struct MaskSample {
  std::string id;
  RasterMask pred;
  RasterMask gt;
};

struct PixelMetrics {
  double miou = 0.0;
  double oiou = 0.0;
  double acc05 = 0.0;
  std::size_t n = 0;
};

PixelMetrics mask_metrics(std::span<const MaskSample> samples, double thr = 0.5);

// Pairs predicted masks with rasterized ground-truth polygons. Records without
// a predicted mask are scored against an empty mask.
std::vector<MaskSample> build_mask_samples(std::span<const Prediction> preds,
                                           std::span<const GroundingRecord> records,
                                           std::optional<QueryKind> kind = std::nullopt);

inline constexpr std::array<double, 3> kCoverageThresholds{0.001, 0.01, 0.1};
inline constexpr std::array<double, 6> kCoverageDecadeEdges{0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};

struct CoverageHistogram {
  std::size_t n = 0;
  // Share of samples with coverage strictly below each kCoverageThresholds entry.
  std::array<double, 3> cumulative_share{};
  // Counts per [edge_i, edge_{i+1}); the last bin is closed at 1.
  std::array<std::size_t, 5> decade_counts{};
};

CoverageHistogram coverage_histogram(std::span<const double> ratios);
CoverageHistogram coverage_histogram(std::span<const GroundingRecord> records);

struct EvalReport {
  std::optional<AccuracySlice> accuracy;
  std::optional<AccuracySlice> hard;
  std::optional<double> consistency;
  std::optional<PixelMetrics> pixel;
  std::optional<CoverageHistogram> coverage;
  std::string dataset_sha256;
  Json config = Json::object();
};

inline constexpr int kReportSchemaVersion = 1;

// Stable field order; rates serialized as fractions in [0, 1].
Json to_json(const EvalReport& r);

// Six categories plus AVG, percentages with two decimals.
std::string format_grid(const AccuracySlice& slice, std::string_view row_label);

}  // namespace vgkit
