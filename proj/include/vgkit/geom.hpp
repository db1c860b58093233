#pragma once

#include "vgkit/core.hpp"

namespace vgkit {

enum class L1Reduction { kMean, kSum };

// Continuous-area IoU; 0 for disjoint boxes.
double box_iou(const Box& a, const Box& b);

// Per-coordinate absolute differences over (x1, y1, x2, y2), reduced by mean or sum.
double box_l1(const Box& a, const Box& b, L1Reduction reduction = L1Reduction::kMean);

// Axis-aligned envelope of the four rotated corners.
Box obb_to_hbb(const OrientedBox& o);

// |a ∩ b| / |a ∪ b|, or 1.0 when both are empty. Throws ArgumentError on size mismatch.
double mask_iou(const RasterMask& a, const RasterMask& b);

struct MaskOverlap {
  std::size_t intersection = 0;
  std::size_t union_ = 0;
};
MaskOverlap mask_overlap(const RasterMask& a, const RasterMask& b);

// Tight half-open pixel bounds of the foreground. Throws ArgumentError("empty mask").
Box mask_to_box(const RasterMask& m);
// Centroid of foreground pixel centers. Throws ArgumentError("empty mask").
Point mask_center(const RasterMask& m);
Point box_center(const Box& b);

double coverage_ratio(const RasterMask& m);

}  // namespace vgkit
