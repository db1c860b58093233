#include "vgkit/geom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "vgkit/errors.hpp"

namespace vgkit {

double box_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double box_l1(const Box& a, const Box& b, L1Reduction reduction) {
  const double sum = std::abs(a.x1 - b.x1) + std::abs(a.y1 - b.y1) + std::abs(a.x2 - b.x2) +
                     std::abs(a.y2 - b.y2);
  return reduction == L1Reduction::kMean ? sum / 4.0 : sum;
}

Box obb_to_hbb(const OrientedBox& o) {
  const double c = std::cos(o.theta);
  const double s = std::sin(o.theta);
  const double hw = o.w / 2.0;
  const double hh = o.h / 2.0;
  const std::array<std::array<double, 2>, 4> offsets{{{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}}};
  Box out{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& [dx, dy] : offsets) {
    const double x = o.cx + dx * c - dy * s;
    const double y = o.cy + dx * s + dy * c;
    out.x1 = std::min(out.x1, x);
    out.y1 = std::min(out.y1, y);
    out.x2 = std::max(out.x2, x);
    out.y2 = std::max(out.y2, y);
  }
  return out;
}

MaskOverlap mask_overlap(const RasterMask& a, const RasterMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ArgumentError("mask dimension mismatch: " + std::to_string(a.width()) + "x" +
                        std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                        std::to_string(b.height()));
  }
  MaskOverlap o;
  auto ab = a.bits();
  auto bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    o.intersection += ab[i] & bb[i];
    o.union_ += ab[i] | bb[i];
  }
  return o;
}

double mask_iou(const RasterMask& a, const RasterMask& b) {
  const MaskOverlap o = mask_overlap(a, b);
  if (o.union_ == 0) return 1.0;
  return static_cast<double>(o.intersection) / static_cast<double>(o.union_);
}

Box mask_to_box(const RasterMask& m) {
  int min_r = m.height(), min_c = m.width(), max_r = -1, max_c = -1;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!m.at(r, c)) continue;
      min_r = std::min(min_r, r);
      max_r = std::max(max_r, r);
      min_c = std::min(min_c, c);
      max_c = std::max(max_c, c);
    }
  }
  if (max_r < 0) throw ArgumentError("empty mask");
  return Box{static_cast<double>(min_c), static_cast<double>(min_r), static_cast<double>(max_c + 1),
             static_cast<double>(max_r + 1)};
}

Point mask_center(const RasterMask& m) {
  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!m.at(r, c)) continue;
      sx += c + 0.5;
      sy += r + 0.5;
      ++n;
    }
  }
  if (n == 0) throw ArgumentError("empty mask");
  return Point{sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

Point box_center(const Box& b) { return Point{(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0}; }

double coverage_ratio(const RasterMask& m) {
  if (m.size() == 0) return 0.0;
  return static_cast<double>(m.foreground_count()) / static_cast<double>(m.size());
}

}  // namespace vgkit
