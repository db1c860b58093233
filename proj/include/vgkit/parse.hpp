#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vgkit/core.hpp"

namespace vgkit {

enum class PromptKind { kPlain, kCot, kI2e };
std::string_view to_string(PromptKind k);
PromptKind parse_prompt_kind(std::string_view s);

enum class CoordMode { kAbsolutePx, kNorm1000, kUnitInterval };
std::string_view to_string(CoordMode m);
CoordMode parse_coord_mode(std::string_view s);

struct Shot {
  std::string query;
  std::string answer;
};

struct PromptTemplate {
  PromptKind kind = PromptKind::kI2e;
  std::vector<Shot> shots;

  // Plain prompts take no exemplars unless explicitly allowed.
  static PromptTemplate make(PromptKind kind, std::vector<Shot> shots = {},
                             bool allow_plain_shots = false);
};

// Prompt skeletons loaded from the versioned template document.
class TemplateSet {
 public:
  static const TemplateSet& builtin();
  static TemplateSet parse(std::string_view json_text);
  static TemplateSet load(const std::filesystem::path& path);

  const std::string& version() const { return version_; }
  const std::string& skeleton(PromptKind kind) const;
  const std::string& shot_format() const { return shot_format_; }
  const std::string& coord_note(CoordMode mode) const;

 private:
  std::string version_;
  std::string shot_format_;
  std::map<PromptKind, std::string> skeletons_;
  std::map<CoordMode, std::string> coord_notes_;
};

// Replaces {NAME} tokens in one pass; substituted text is never rescanned.
std::string substitute(std::string_view tpl, const std::map<std::string, std::string>& values);

std::string render_prompt(const PromptTemplate& tpl, std::string_view query, CoordMode coord,
                          const TemplateSet& templates = TemplateSet::builtin());

using RawBox = std::array<double, 4>;

struct ParsedResponse {
  std::optional<std::string> think;
  std::optional<std::string> explicit_ref;
  std::optional<std::string> answer;
  std::vector<RawBox> boxes_raw;
  bool overall_format_ok = false;
  bool box_format_ok = false;

  const RawBox* first_box() const { return boxes_raw.empty() ? nullptr : &boxes_raw.front(); }
};

ParsedResponse parse_response(std::string_view text, PromptKind kind);

// All "[n, n, n, n]" groups in left-to-right order. Numbers are plain
// integers or decimals with an optional leading minus; exponents are rejected.
std::vector<RawBox> find_bracketed_boxes(std::string_view text);

// Maps reply coordinates to image pixels, reordering inverted corners.
// Throws ConversionError when the result has zero width or height.
Box to_box(const RawBox& raw, CoordMode coord, int image_w, int image_h);

Json to_json(const ParsedResponse& p);

}  // namespace vgkit
