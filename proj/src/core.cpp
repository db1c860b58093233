#include "vgkit/core.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json_util.hpp"
#include "vgkit/errors.hpp"

namespace vgkit {

namespace detail {

std::string format_double17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

using detail::get_double;
using detail::get_int;
using detail::get_string;
using detail::require_field;

// ---------------------------------------------------------------- enums

std::string_view to_string(Category c) {
  switch (c) {
    case Category::kTraffic: return "traffic";
    case Category::kDisaster: return "disaster";
    case Category::kSecurity: return "security";
    case Category::kSport: return "sport";
    case Category::kSocialActivity: return "social_activity";
    case Category::kProductiveActivity: return "productive_activity";
  }
  return "?";
}

Category parse_category(std::string_view s) {
  for (Category c : kAllCategories) {
    if (to_string(c) == s) return c;
  }
  throw ValidationError("category: unknown category '" + std::string(s) + "'");
}

std::string_view to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw ValidationError("split: unknown split '" + std::string(s) + "'");
}

std::string_view to_string(QueryKind k) { return k == QueryKind::kExplicit ? "explicit" : "implicit"; }

QueryKind parse_query_kind(std::string_view s) {
  if (s == "explicit") return QueryKind::kExplicit;
  if (s == "implicit") return QueryKind::kImplicit;
  throw ValidationError("query_kind: unknown query kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- geometry types

bool Box::is_valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x1 < x2 && y1 < y2;
}

void Box::validate() const {
  if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2))) {
    throw ValidationError("box coordinates must be finite");
  }
  if (!(x1 < x2)) throw ValidationError("x1 < x2 violated");
  if (!(y1 < y2)) throw ValidationError("y1 < y2 violated");
}

void Box::validate_within(int image_w, int image_h) const {
  validate();
  if (x1 < 0) throw ValidationError("0 <= x1 violated");
  if (y1 < 0) throw ValidationError("0 <= y1 violated");
  if (x2 > image_w) throw ValidationError("x2 <= image_w violated");
  if (y2 > image_h) throw ValidationError("y2 <= image_h violated");
}

void PolygonSet::validate() const {
  for (std::size_t r = 0; r < rings.size(); ++r) {
    if (rings[r].size() < 3) {
      throw ValidationError("ring " + std::to_string(r) + " has fewer than 3 vertices");
    }
    for (const Point& p : rings[r]) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw ValidationError("ring " + std::to_string(r) + " has a non-finite vertex");
      }
    }
  }
}

void PolygonSet::validate_within(int image_w, int image_h) const {
  validate();
  for (std::size_t r = 0; r < rings.size(); ++r) {
    for (const Point& p : rings[r]) {
      if (p.x < 0 || p.y < 0 || p.x > image_w || p.y > image_h) {
        throw ValidationError("ring " + std::to_string(r) + " has a vertex outside the image");
      }
    }
  }
}

RasterMask::RasterMask(int width, int height) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw ArgumentError("mask dimensions must be positive");
  bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
}

RasterMask::RasterMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  if (width <= 0 || height <= 0) throw ArgumentError("mask dimensions must be positive");
  if (bits_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw ArgumentError("mask bit count does not equal width * height");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t RasterMask::foreground_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------- RLE

Rle rle_encode(const RasterMask& mask) {
  Rle rle{mask.width(), mask.height(), {}};
  std::uint8_t current = 0;
  std::uint64_t run = 0;
  for (std::uint8_t b : mask.bits()) {
    if (b != current) {
      rle.counts.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

RasterMask rle_decode(const Rle& rle) {
  if (rle.width <= 0 || rle.height <= 0) throw CodecError("rle dimensions must be positive");
  const std::uint64_t total =
      static_cast<std::uint64_t>(rle.width) * static_cast<std::uint64_t>(rle.height);
  std::uint64_t sum = 0;
  for (std::uint64_t c : rle.counts) {
    if (c > total || sum > total - c) {
      throw CodecError("rle counts sum exceeds width * height");
    }
    sum += c;
  }
  if (sum != total) {
    throw CodecError("rle counts sum " + std::to_string(sum) + " != width * height " +
                     std::to_string(total));
  }
  std::vector<std::uint8_t> bits;
  bits.reserve(total);
  std::uint8_t value = 0;
  for (std::uint64_t c : rle.counts) {
    bits.insert(bits.end(), c, value);
    value ^= 1;
  }
  return RasterMask(rle.width, rle.height, std::move(bits));
}

// ---------------------------------------------------------------- rasterization

bool contains_even_odd(const PolygonSet& poly, Point p) {
  bool inside = false;
  for (const auto& ring : poly.rings) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point& a = ring[i];
      const Point& b = ring[j];
      if ((a.y > p.y) != (b.y > p.y)) {
        double x_cross = a.x + (b.x - a.x) * (p.y - a.y) / (b.y - a.y);
        if (p.x < x_cross) inside = !inside;
      }
    }
  }
  return inside;
}

RasterMask rasterize(const PolygonSet& poly, int width, int height) {
  if (width <= 0 || height <= 0) throw ArgumentError("rasterize: width and height must be positive");
  poly.validate();
  RasterMask mask(width, height);
  std::vector<double> crossings;
  for (int row = 0; row < height; ++row) {
    const double y = row + 0.5;
    crossings.clear();
    for (const auto& ring : poly.rings) {
      const std::size_t n = ring.size();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = ring[i];
        const Point& b = ring[j];
        if ((a.y > y) != (b.y > y)) {
          crossings.push_back(a.x + (b.x - a.x) * (y - a.y) / (b.y - a.y));
        }
      }
    }
    if (crossings.empty()) continue;
    std::sort(crossings.begin(), crossings.end());
    // A center is inside iff an odd number of crossings lie strictly to its right.
    for (int col = 0; col < width; ++col) {
      const double x = col + 0.5;
      auto right = crossings.end() - std::upper_bound(crossings.begin(), crossings.end(), x);
      if (right % 2 == 1) mask.set(row, col);
    }
  }
  return mask;
}

// ---------------------------------------------------------------- records

void GroundingRecord::validate() const {
  if (id.empty()) throw ValidationError("id: must be non-empty");
  if (image_w <= 0) throw ValidationError("image_w: must be positive");
  if (image_h <= 0) throw ValidationError("image_h: must be positive");
  if (implicit_query.empty()) throw ValidationError("implicit_query: must be non-empty");
  if (explicit_query.empty()) throw ValidationError("explicit_query: must be non-empty");
  try {
    gt_box.validate_within(image_w, image_h);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("gt_box: ") + e.what());
  }
  try {
    gt_mask.validate_within(image_w, image_h);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("gt_mask: ") + e.what());
  }
}

Json to_json(const Box& b) { return Json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("box must be an array of 4 numbers");
  Box b{detail::as_finite_number(j[0], "box[0]"), detail::as_finite_number(j[1], "box[1]"),
        detail::as_finite_number(j[2], "box[2]"), detail::as_finite_number(j[3], "box[3]")};
  b.validate();
  return b;
}

Json to_json(const PolygonSet& p) {
  Json rings = Json::array();
  for (const auto& ring : p.rings) {
    Json r = Json::array();
    for (const Point& pt : ring) r.push_back(Json::array({pt.x, pt.y}));
    rings.push_back(std::move(r));
  }
  return rings;
}

PolygonSet polygons_from_json(const Json& j) {
  if (!j.is_array()) throw ValidationError("polygon set must be an array of rings");
  PolygonSet p;
  for (const Json& ring : j) {
    if (!ring.is_array()) throw ValidationError("ring must be an array of [x, y] pairs");
    auto& out = p.rings.emplace_back();
    for (const Json& v : ring) {
      if (!v.is_array() || v.size() != 2) throw ValidationError("vertex must be an [x, y] pair");
      out.push_back({detail::as_finite_number(v[0], "vertex x"),
                     detail::as_finite_number(v[1], "vertex y")});
    }
  }
  p.validate();
  return p;
}

Json to_json(const Rle& rle) {
  Json j;
  j["width"] = rle.width;
  j["height"] = rle.height;
  j["counts"] = rle.counts;
  return j;
}

Rle rle_from_json(const Json& j) {
  Rle rle;
  rle.width = static_cast<int>(get_int(j, "width"));
  rle.height = static_cast<int>(get_int(j, "height"));
  const Json& counts = require_field(j, "counts");
  if (!counts.is_array()) throw ValidationError("field 'counts' must be an array");
  for (const Json& c : counts) {
    if (!c.is_number_unsigned() && !(c.is_number_integer() && c.get<long long>() >= 0)) {
      throw ValidationError("field 'counts' must hold non-negative integers");
    }
    rle.counts.push_back(c.get<std::uint64_t>());
  }
  return rle;
}

Json to_json(const GroundingRecord& r) {
  Json j;
  j["id"] = r.id;
  j["image_ref"] = r.image_ref;
  j["image_w"] = r.image_w;
  j["image_h"] = r.image_h;
  j["category"] = to_string(r.category);
  j["implicit_query"] = r.implicit_query;
  j["explicit_query"] = r.explicit_query;
  j["gt_box"] = to_json(r.gt_box);
  j["gt_mask"] = to_json(r.gt_mask);
  j["split"] = to_string(r.split);
  return j;
}

namespace {

template <typename F>
auto with_field(std::string_view field, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(field) + ": " + e.what());
  }
}

}  // namespace

GroundingRecord record_from_json(const Json& j) {
  GroundingRecord r;
  r.id = get_string(j, "id");
  r.image_ref = get_string(j, "image_ref");
  r.image_w = static_cast<int>(get_int(j, "image_w"));
  r.image_h = static_cast<int>(get_int(j, "image_h"));
  r.category = parse_category(get_string(j, "category"));
  r.implicit_query = get_string(j, "implicit_query");
  r.explicit_query = get_string(j, "explicit_query");
  const Json& box = require_field(j, "gt_box");
  r.gt_box = with_field("gt_box", [&] { return box_from_json(box); });
  auto mask_it = j.find("gt_mask");
  if (mask_it != j.end() && !mask_it->is_null()) {
    r.gt_mask = with_field("gt_mask", [&] { return polygons_from_json(*mask_it); });
  }
  r.split = parse_split(get_string(j, "split"));
  r.validate();
  return r;
}

Json to_json(const Prediction& p) {
  Json j;
  j["record_id"] = p.record_id;
  j["query_kind"] = to_string(p.query_kind);
  j["raw_text"] = p.raw_text;
  j["box"] = p.box ? to_json(*p.box) : Json(nullptr);
  if (p.mask) j["mask"] = to_json(rle_encode(*p.mask));
  return j;
}

Prediction prediction_from_json(const Json& j) {
  Prediction p;
  p.record_id = get_string(j, "record_id");
  if (p.record_id.empty()) throw ValidationError("record_id: must be non-empty");
  p.query_kind = parse_query_kind(get_string(j, "query_kind"));
  p.raw_text = get_string(j, "raw_text");
  auto box_it = j.find("box");
  if (box_it != j.end() && !box_it->is_null()) {
    p.box = with_field("box", [&] { return box_from_json(*box_it); });
  }
  auto mask_it = j.find("mask");
  if (mask_it != j.end() && !mask_it->is_null()) {
    p.mask = with_field("mask", [&] { return rle_decode(rle_from_json(*mask_it)); });
  }
  return p;
}

// ---------------------------------------------------------------- files

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw ValidationError("write failed for '" + path.string() + "'");
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

namespace {

template <typename T, typename Parse>
std::vector<T> parse_lines(std::string_view text, Parse&& parse) {
  std::vector<T> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    try {
      out.push_back(parse(j));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == text.size()) break;
  }
  return out;
}

}  // namespace

std::vector<GroundingRecord> parse_dataset(std::string_view text) {
  auto records = parse_lines<GroundingRecord>(text, record_from_json);
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!seen.insert(records[i].id).second) {
      throw ValidationError("duplicate record id '" + records[i].id + "'");
    }
  }
  return records;
}

std::vector<GroundingRecord> load_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_dataset(const std::filesystem::path& path, std::span<const GroundingRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump(-1, ' ', false, Json::error_handler_t::replace);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<Prediction> parse_predictions(std::string_view text) {
  return parse_lines<Prediction>(text, prediction_from_json);
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  try {
    return parse_predictions(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_predictions(const std::filesystem::path& path, std::span<const Prediction> preds) {
  std::string out;
  for (const auto& p : preds) {
    out += to_json(p).dump(-1, ' ', false, Json::error_handler_t::replace);
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace vgkit
