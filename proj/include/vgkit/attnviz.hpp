#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vgkit/core.hpp"

namespace vgkit {

// Half-open token index interval [begin, end).
struct TokenRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool contains(int i) const { return i >= begin && i < end; }
};

// Per generated step, one attention vector over that step's context, already
// averaged over layers and heads.
struct AttentionTrace {
  TokenRange image_range;
  TokenRange query_range;
  int grid_h = 0;
  int grid_w = 0;
  int image_w = 0;
  int image_h = 0;
  std::vector<std::string> tokens;  // optional generated-token strings, one per step
  std::vector<std::vector<float>> steps;

  // Checks token ranges against the grid; each step must be a distribution (1e-4).
  void validate() const;
};

// Header: a JSON object followed by one blank line; payload: little-endian
// float32 values, steps back to back.
AttentionTrace parse_trace(std::string_view bytes);
AttentionTrace load_trace(const std::filesystem::path& path);
std::string serialize_trace(const AttentionTrace& trace);

struct RatioPoint {
  double image = 0.0;
  double query = 0.0;
  double generated = 0.0;
};
using RatioCurve = std::vector<RatioPoint>;

RatioCurve ratio_curve(const AttentionTrace& trace);

// Steps whose image ratio beats every earlier neighbour and is not exceeded by
// any later one inside the centred window. Window must be odd and >= 1.
std::vector<int> find_peaks(const RatioCurve& curve, int window);

struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major, in [0, 1]
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

// Image-token slice reshaped row-major onto the patch grid, min-max normalized
// (a constant slice maps to zeros).
Heatmap patch_grid(const AttentionTrace& trace, int step);

// Bilinear resize with half-pixel centres and edge clamping.
Heatmap resize_bilinear(const Heatmap& src, int out_w, int out_h);

// patch_grid upsampled to the image size.
Heatmap heatmap(const AttentionTrace& trace, int step);

// Binary (P5) 8-bit portable graymap.
std::string encode_pgm(const Heatmap& map);

// "step,image_ratio,query_ratio,generated_ratio" table.
std::string format_curve_csv(const RatioCurve& curve);

}  // namespace vgkit
