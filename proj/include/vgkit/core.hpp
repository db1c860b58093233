#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace vgkit {

using Json = nlohmann::ordered_json;

enum class Category {
  kTraffic,
  kDisaster,
  kSecurity,
  kSport,
  kSocialActivity,
  kProductiveActivity,
};

inline constexpr Category kAllCategories[] = {
    Category::kTraffic,        Category::kDisaster,       Category::kSecurity,
    Category::kSport,          Category::kSocialActivity, Category::kProductiveActivity,
};

std::string_view to_string(Category c);
// Throws ValidationError("unknown category ...") for anything outside the six values.
Category parse_category(std::string_view s);

enum class Split { kTrain, kTest };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

enum class QueryKind { kExplicit, kImplicit };
std::string_view to_string(QueryKind k);
QueryKind parse_query_kind(std::string_view s);

struct Point {
  double x = 0;
  double y = 0;
  bool operator==(const Point&) const = default;
};

// Axis-aligned box in corner form, continuous pixel coordinates.
struct Box {
  double x1 = 0;
  double y1 = 0;
  double x2 = 0;
  double y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool is_valid() const;

  // Throws ValidationError naming the violated inequality.
  void validate() const;
  void validate_within(int image_w, int image_h) const;

  bool operator==(const Box&) const = default;
};

struct OrientedBox {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;
  double theta = 0;  // radians
};

struct PolygonSet {
  std::vector<std::vector<Point>> rings;

  void validate() const;
  void validate_within(int image_w, int image_h) const;
  bool operator==(const PolygonSet&) const = default;
};

// Binary mask, row-major, one byte per pixel (0 or 1).
class RasterMask {
 public:
  RasterMask() = default;
  RasterMask(int width, int height);
  RasterMask(int width, int height, std::vector<std::uint8_t> bits);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return bits_.size(); }

  bool at(int row, int col) const { return bits_[index(row, col)] != 0; }
  void set(int row, int col, bool value = true) { bits_[index(row, col)] = value ? 1 : 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t foreground_count() const;
  bool empty() const { return foreground_count() == 0; }

  bool operator==(const RasterMask&) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Row-major run lengths; counts[0] is the leading background run (may be 0),
// then runs alternate foreground/background.
struct Rle {
  int width = 0;
  int height = 0;
  std::vector<std::uint64_t> counts;
  bool operator==(const Rle&) const = default;
};

Rle rle_encode(const RasterMask& mask);
RasterMask rle_decode(const Rle& rle);

// Pixel (row i, col j) is foreground iff (j + 0.5, i + 0.5) lies inside the
// union of rings under the even-odd rule.
RasterMask rasterize(const PolygonSet& poly, int width, int height);

// Even-odd point-in-polygon test against all rings together.
bool contains_even_odd(const PolygonSet& poly, Point p);

struct GroundingRecord {
  std::string id;
  std::string image_ref;
  int image_w = 0;
  int image_h = 0;
  Category category = Category::kTraffic;
  std::string implicit_query;
  std::string explicit_query;
  Box gt_box;
  PolygonSet gt_mask;
  Split split = Split::kTest;

  void validate() const;
  const std::string& query(QueryKind kind) const {
    return kind == QueryKind::kExplicit ? explicit_query : implicit_query;
  }
  bool operator==(const GroundingRecord&) const = default;
};

struct Prediction {
  std::string record_id;
  QueryKind query_kind = QueryKind::kImplicit;
  std::string raw_text;
  std::optional<Box> box;
  std::optional<RasterMask> mask;

  bool operator==(const Prediction&) const = default;
};

// JSON mapping of the file formats. Field names match the struct members.
Json to_json(const Box& b);
Box box_from_json(const Json& j);
Json to_json(const PolygonSet& p);
PolygonSet polygons_from_json(const Json& j);
Json to_json(const Rle& rle);
Rle rle_from_json(const Json& j);
Json to_json(const GroundingRecord& r);
GroundingRecord record_from_json(const Json& j);
Json to_json(const Prediction& p);
Prediction prediction_from_json(const Json& j);

// Line-delimited JSON dataset. Blank lines are skipped; errors carry the
// 1-based line number. Record ids must be unique.
std::vector<GroundingRecord> load_dataset(const std::filesystem::path& path);
std::vector<GroundingRecord> parse_dataset(std::string_view text);
void write_dataset(const std::filesystem::path& path, std::span<const GroundingRecord> records);

std::vector<Prediction> load_predictions(const std::filesystem::path& path);
std::vector<Prediction> parse_predictions(std::string_view text);
void write_predictions(const std::filesystem::path& path, std::span<const Prediction> preds);

// Shared helpers for the line-delimited files.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
std::string sha256_hex(std::string_view data);

}  // namespace vgkit
