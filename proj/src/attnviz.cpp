#include "vgkit/attnviz.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>

#include "json_util.hpp"
#include "vgkit/errors.hpp"

namespace vgkit {

void AttentionTrace::validate() const {
  if (grid_h <= 0 || grid_w <= 0) throw ValidationError("trace: grid dimensions must be positive");
  if (image_w <= 0 || image_h <= 0) throw ValidationError("trace: image dimensions must be positive");
  for (const auto& [name, r] : {std::pair{"image_range", image_range}, std::pair{"query_range", query_range}}) {
    if (r.begin < 0 || r.end < r.begin) throw ValidationError(std::string("trace: ") + name + " is malformed");
  }
  if (image_range.size() != grid_h * grid_w) {
    throw ValidationError("trace: image_range length " + std::to_string(image_range.size()) +
                          " != grid_h * grid_w " + std::to_string(grid_h * grid_w));
  }
  if (image_range.begin < query_range.end && query_range.begin < image_range.end && query_range.size() > 0) {
    throw ValidationError("trace: image_range and query_range overlap");
  }
  if (!tokens.empty() && tokens.size() != steps.size()) {
    throw ValidationError("trace: token count does not match step count");
  }
  const int needed = std::max(image_range.end, query_range.end);
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const auto& v = steps[s];
    if (static_cast<int>(v.size()) < needed) {
      throw ValidationError("trace: step " + std::to_string(s) + " context shorter than the declared ranges");
    }
    double sum = 0.0;
    for (float w : v) {
      if (!std::isfinite(w) || w < 0) {
        throw ValidationError("trace: step " + std::to_string(s) + " has a negative or non-finite weight");
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-4) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "trace: step %zu attention sums to %.6f, expected 1", s, sum);
      throw ValidationError(buf);
    }
  }
}

namespace {

TokenRange range_from_json(const Json& j, std::string_view key) {
  const Json& v = detail::require_field(j, key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    throw ValidationError("trace: field '" + std::string(key) + "' must be [begin, end]");
  }
  return TokenRange{v[0].get<int>(), v[1].get<int>()};
}

}  // namespace

AttentionTrace parse_trace(std::string_view bytes) {
  const std::size_t sep = bytes.find("\n\n");
  if (sep == std::string_view::npos) throw CodecError("trace: header is not terminated by a blank line");
  Json h;
  try {
    h = Json::parse(bytes.substr(0, sep));
  } catch (const Json::parse_error& e) {
    throw ValidationError(std::string("trace: malformed header: ") + e.what());
  }
  AttentionTrace t;
  const auto num_steps = detail::get_int(h, "num_steps");
  if (num_steps < 0) throw ValidationError("trace: num_steps must be >= 0");
  const Json& ctx = detail::require_field(h, "context_len");
  if (!ctx.is_array() || static_cast<long long>(ctx.size()) != num_steps) {
    throw ValidationError("trace: context_len must list one length per step");
  }
  t.image_range = range_from_json(h, "image_range");
  t.query_range = range_from_json(h, "query_range");
  t.grid_h = static_cast<int>(detail::get_int(h, "grid_h"));
  t.grid_w = static_cast<int>(detail::get_int(h, "grid_w"));
  t.image_w = static_cast<int>(detail::get_int(h, "image_w"));
  t.image_h = static_cast<int>(detail::get_int(h, "image_h"));
  if (auto it = h.find("tokens"); it != h.end() && !it->is_null()) {
    t.tokens = it->get<std::vector<std::string>>();
  }

  std::string_view payload = bytes.substr(sep + 2);
  std::size_t expected = 0;
  for (const Json& c : ctx) {
    if (!c.is_number_integer() || c.get<long long>() < 0) {
      throw ValidationError("trace: context_len entries must be non-negative integers");
    }
    expected += c.get<std::size_t>();
  }
  if (payload.size() != expected * 4) {
    throw CodecError("trace: payload length " + std::to_string(payload.size()) + " bytes, expected " +
                     std::to_string(expected * 4));
  }
  std::size_t off = 0;
  for (const Json& c : ctx) {
    auto& step = t.steps.emplace_back(c.get<std::size_t>());
    for (float& w : step) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[off + b])) << (8 * b);
      w = std::bit_cast<float>(u);
      off += 4;
    }
  }
  t.validate();
  return t;
}

AttentionTrace load_trace(const std::filesystem::path& path) { return parse_trace(read_file(path)); }

std::string serialize_trace(const AttentionTrace& trace) {
  Json h;
  h["num_steps"] = trace.steps.size();
  Json ctx = Json::array();
  for (const auto& s : trace.steps) ctx.push_back(s.size());
  h["context_len"] = std::move(ctx);
  h["image_range"] = Json::array({trace.image_range.begin, trace.image_range.end});
  h["query_range"] = Json::array({trace.query_range.begin, trace.query_range.end});
  h["grid_h"] = trace.grid_h;
  h["grid_w"] = trace.grid_w;
  h["image_w"] = trace.image_w;
  h["image_h"] = trace.image_h;
  if (!trace.tokens.empty()) h["tokens"] = trace.tokens;
  std::string out = h.dump() + "\n\n";
  for (const auto& s : trace.steps) {
    for (float w : s) {
      const auto u = std::bit_cast<std::uint32_t>(w);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
  }
  return out;
}

RatioCurve ratio_curve(const AttentionTrace& trace) {
  RatioCurve curve;
  curve.reserve(trace.steps.size());
  for (const auto& v : trace.steps) {
    double img = 0, qry = 0, gen = 0;
    for (int i = 0; i < static_cast<int>(v.size()); ++i) {
      if (trace.image_range.contains(i)) img += v[i];
      else if (trace.query_range.contains(i)) qry += v[i];
      else gen += v[i];
    }
    const double total = img + qry + gen;
    if (total <= 0) {
      curve.push_back({});
      continue;
    }
    curve.push_back({img / total, qry / total, gen / total});
  }
  return curve;
}

std::vector<int> find_peaks(const RatioCurve& curve, int window) {
  if (window < 1 || window % 2 == 0) throw ArgumentError("find_peaks: window must be odd and >= 1");
  const int half = window / 2;
  const int n = static_cast<int>(curve.size());
  std::vector<int> peaks;
  for (int i = 0; i < n; ++i) {
    bool peak = true;
    for (int j = std::max(0, i - half); j <= std::min(n - 1, i + half) && peak; ++j) {
      if (j < i) peak = curve[i].image > curve[j].image;
      else if (j > i) peak = curve[i].image >= curve[j].image;
    }
    if (peak) peaks.push_back(i);
  }
  return peaks;
}

Heatmap patch_grid(const AttentionTrace& trace, int step) {
  if (step < 0 || step >= static_cast<int>(trace.steps.size())) {
    throw ArgumentError("heatmap: step " + std::to_string(step) + " out of range");
  }
  const auto& v = trace.steps[static_cast<std::size_t>(step)];
  Heatmap grid{trace.grid_w, trace.grid_h, {}};
  grid.values.assign(v.begin() + trace.image_range.begin, v.begin() + trace.image_range.end);
  const auto [lo, hi] = std::minmax_element(grid.values.begin(), grid.values.end());
  const double mn = *lo, mx = *hi;
  for (double& x : grid.values) x = mx > mn ? (x - mn) / (mx - mn) : 0.0;
  return grid;
}

Heatmap resize_bilinear(const Heatmap& src, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0) throw ArgumentError("resize_bilinear: output size must be positive");
  Heatmap out{out_w, out_h, std::vector<double>(static_cast<std::size_t>(out_w) * out_h)};
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = src.at(y0, x0) * (1 - wx) + src.at(y0, x1) * wx;
      const double bot = src.at(y1, x0) * (1 - wx) + src.at(y1, x1) * wx;
      out.values[static_cast<std::size_t>(y) * out_w + x] = std::clamp(top * (1 - wy) + bot * wy, 0.0, 1.0);
    }
  }
  return out;
}

Heatmap heatmap(const AttentionTrace& trace, int step) {
  return resize_bilinear(patch_grid(trace, step), trace.image_w, trace.image_h);
}

std::string encode_pgm(const Heatmap& map) {
  std::string out = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  out.reserve(out.size() + map.values.size());
  for (double v : map.values) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

std::string format_curve_csv(const RatioCurve& curve) {
  std::string out = "step,image_ratio,query_ratio,generated_ratio\n";
  char buf[128];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.9f,%.9f\n", i, curve[i].image, curve[i].query, curve[i].generated);
    out += buf;
  }
  return out;
}

}  // namespace vgkit
