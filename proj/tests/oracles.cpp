#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

double pixel_grid_iou(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2, int by2) {
  const int lo_x = std::min(ax1, bx1), hi_x = std::max(ax2, bx2);
  const int lo_y = std::min(ay1, by1), hi_y = std::max(ay2, by2);
  long inter = 0, uni = 0;
  for (int y = lo_y; y < hi_y; ++y) {
    for (int x = lo_x; x < hi_x; ++x) {
      const bool in_a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
      const bool in_b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

bool pnpoly(const std::vector<std::vector<vgkit::Point>>& rings, double x, double y) {
  bool c = false;
  for (const auto& ring : rings) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const double xi = ring[i].x, yi = ring[i].y, xj = ring[j].x, yj = ring[j].y;
      if (((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi)) c = !c;
    }
  }
  return c;
}

std::vector<std::uint8_t> pnpoly_mask(const std::vector<std::vector<vgkit::Point>>& rings, int w, int h) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(w) * h, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) bits[static_cast<std::size_t>(r) * w + c] = pnpoly(rings, c + 0.5, r + 0.5);
  }
  return bits;
}

std::vector<std::uint64_t> runs(const std::vector<std::uint8_t>& bits) {
  std::vector<std::uint64_t> out;
  std::uint8_t expect = 0;
  std::size_t i = 0;
  while (i < bits.size()) {
    std::size_t j = i;
    while (j < bits.size() && bits[j] == expect) ++j;
    out.push_back(j - i);
    i = j;
    expect = !expect;
  }
  if (out.empty()) out.push_back(0);
  return out;
}

double mean(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  return static_cast<double>(s / v.size());
}

double population_std(const std::vector<double>& v) {
  const double m = mean(v);
  long double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(static_cast<double>(s / v.size()));
}

double bilinear_at(const std::vector<double>& grid, int w, int h, double sx, double sy) {
  auto px = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return grid[static_cast<std::size_t>(y) * w + x];
  };
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  const double top = px(x0, y0) * (1 - fx) + px(x0 + 1, y0) * fx;
  const double bottom = px(x0, y0 + 1) * (1 - fx) + px(x0 + 1, y0 + 1) * fx;
  return top * (1 - fy) + bottom * fy;
}

std::vector<std::vector<vgkit::Point>> random_rings(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h);
  std::vector<std::vector<vgkit::Point>> rings;
  double x1 = ux(rng), x2 = ux(rng), y1 = uy(rng), y2 = uy(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  rings.push_back({{x1, y1}, {x2, y1}, {x2, y2}, {x1, y2}});
  rings.push_back({{ux(rng), uy(rng)}, {ux(rng), uy(rng)}, {ux(rng), uy(rng)}});
  return rings;
}

vgkit::GroundingRecord make_record(const std::string& id, vgkit::Category cat, vgkit::Box box, int w, int h) {
  vgkit::GroundingRecord r;
  r.id = id;
  r.image_ref = "images/" + id + ".jpg";
  r.image_w = w;
  r.image_h = h;
  r.category = cat;
  r.implicit_query = "the thing that matters in " + id;
  r.explicit_query = "red car " + id;
  r.gt_box = box;
  r.gt_mask.rings = {{{box.x1, box.y1}, {box.x2, box.y1}, {box.x2, box.y2}, {box.x1, box.y2}}};
  r.split = vgkit::Split::kTest;
  return r;
}

}  // namespace oracle
