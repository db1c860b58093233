#include "vgkit/parse.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>

#include "builtin_templates.hpp"
#include "json_util.hpp"
#include "vgkit/errors.hpp"

namespace vgkit {

std::string_view to_string(PromptKind k) {
  switch (k) {
    case PromptKind::kPlain: return "plain";
    case PromptKind::kCot: return "cot";
    case PromptKind::kI2e: return "i2e";
  }
  return "?";
}

PromptKind parse_prompt_kind(std::string_view s) {
  if (s == "plain") return PromptKind::kPlain;
  if (s == "cot") return PromptKind::kCot;
  if (s == "i2e") return PromptKind::kI2e;
  throw ValidationError("unknown prompt kind '" + std::string(s) + "'");
}

std::string_view to_string(CoordMode m) {
  switch (m) {
    case CoordMode::kAbsolutePx: return "absolute_px";
    case CoordMode::kNorm1000: return "norm_1000";
    case CoordMode::kUnitInterval: return "unit_interval";
  }
  return "?";
}

CoordMode parse_coord_mode(std::string_view s) {
  if (s == "absolute_px") return CoordMode::kAbsolutePx;
  if (s == "norm_1000") return CoordMode::kNorm1000;
  if (s == "unit_interval") return CoordMode::kUnitInterval;
  throw ValidationError("unknown coordinate mode '" + std::string(s) + "'");
}

PromptTemplate PromptTemplate::make(PromptKind kind, std::vector<Shot> shots, bool allow_plain_shots) {
  if (kind == PromptKind::kPlain && !shots.empty() && !allow_plain_shots) {
    throw ValidationError("plain prompts take no exemplars unless explicitly allowed");
  }
  for (const Shot& s : shots) {
    if (s.query.empty() || s.answer.empty()) throw ValidationError("exemplar query and answer must be non-empty");
  }
  return PromptTemplate{kind, std::move(shots)};
}

// ---------------------------------------------------------------- templates

const TemplateSet& TemplateSet::builtin() {
  static const TemplateSet set = TemplateSet::parse(detail::kBuiltinTemplates);
  return set;
}

TemplateSet TemplateSet::parse(std::string_view json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw ValidationError(std::string("template file: malformed JSON: ") + e.what());
  }
  TemplateSet set;
  set.version_ = detail::get_string(j, "version");
  set.shot_format_ = detail::get_string(j, "shot_format");
  const Json& templates = detail::require_field(j, "templates");
  for (PromptKind k : {PromptKind::kPlain, PromptKind::kCot, PromptKind::kI2e}) {
    set.skeletons_[k] = detail::get_string(templates, to_string(k));
  }
  const Json& notes = detail::require_field(j, "coord_notes");
  for (CoordMode m : {CoordMode::kAbsolutePx, CoordMode::kNorm1000, CoordMode::kUnitInterval}) {
    set.coord_notes_[m] = detail::get_string(notes, to_string(m));
  }
  return set;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) { return parse(read_file(path)); }

const std::string& TemplateSet::skeleton(PromptKind kind) const { return skeletons_.at(kind); }

const std::string& TemplateSet::coord_note(CoordMode mode) const { return coord_notes_.at(mode); }

std::string substitute(std::string_view tpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      std::size_t close = tpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(tpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tpl[i++]);
  }
  return out;
}

std::string render_prompt(const PromptTemplate& tpl, std::string_view query, CoordMode coord,
                          const TemplateSet& templates) {
  if (query.empty()) throw ArgumentError("render_prompt: query must be non-empty");
  std::string shots;
  for (std::size_t i = 0; i < tpl.shots.size(); ++i) {
    shots += substitute(templates.shot_format(), {{"INDEX", std::to_string(i + 1)},
                                                  {"SHOT_QUERY", tpl.shots[i].query},
                                                  {"SHOT_ANSWER", tpl.shots[i].answer}});
  }
  return substitute(templates.skeleton(tpl.kind), {{"SHOTS", shots},
                                                   {"QUERY", std::string(query)},
                                                   {"COORD_NOTE", templates.coord_note(coord)}});
}

// ---------------------------------------------------------------- replies

namespace {

std::string trim(std::string_view s) {
  const char* ws = " \t\r\n";
  std::size_t b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

struct Segment {
  std::string name;
  std::size_t open_count = 0;
  std::size_t close_count = 0;
  std::size_t open_pos = std::string_view::npos;   // first "<name>"
  std::size_t close_pos = std::string_view::npos;  // first "</name>" after open_pos
  std::optional<std::string> content;

  bool well_formed() const {
    return open_count == 1 && close_count == 1 && content.has_value();
  }
  bool absent() const { return open_count == 0 && close_count == 0; }
};

Segment scan_segment(std::string_view text, std::string name) {
  Segment seg;
  const std::string open = "<" + name + ">";
  const std::string close = "</" + name + ">";
  seg.name = std::move(name);
  seg.open_count = count_occurrences(text, open);
  seg.close_count = count_occurrences(text, close);
  seg.open_pos = text.find(open);
  if (seg.open_pos != std::string_view::npos) {
    const std::size_t body = seg.open_pos + open.size();
    seg.close_pos = text.find(close, body);
    if (seg.close_pos != std::string_view::npos) {
      seg.content = trim(text.substr(body, seg.close_pos - body));
    }
  }
  return seg;
}

bool precedes(const Segment& a, const Segment& b) { return a.close_pos < b.open_pos; }

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

void skip_space(std::string_view s, std::size_t& i) {
  while (i < s.size() && is_space(s[i])) ++i;
}

// number := '-'? digit+ ('.' digit+)?
bool scan_number(std::string_view s, std::size_t& i, double& out) {
  const std::size_t start = i;
  if (i < s.size() && s[i] == '-') ++i;
  const std::size_t int_start = i;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i == int_start) return false;
  if (i < s.size() && s[i] == '.') {
    ++i;
    const std::size_t frac_start = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i == frac_start) return false;
  }
  auto res = std::from_chars(s.data() + start, s.data() + i, out);
  return res.ec == std::errc() && std::isfinite(out);
}

bool scan_box_at(std::string_view s, std::size_t& i, RawBox& box) {
  std::size_t j = i + 1;  // past '['
  for (int k = 0; k < 4; ++k) {
    skip_space(s, j);
    if (!scan_number(s, j, box[k])) return false;
    skip_space(s, j);
    const char expected = k < 3 ? ',' : ']';
    if (j >= s.size() || s[j] != expected) return false;
    ++j;
  }
  i = j;
  return true;
}

}  // namespace

std::vector<RawBox> find_bracketed_boxes(std::string_view text) {
  std::vector<RawBox> boxes;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '[') {
      RawBox box;
      std::size_t j = i;
      if (scan_box_at(text, j, box)) {
        boxes.push_back(box);
        i = j;
        continue;
      }
    }
    ++i;
  }
  return boxes;
}

ParsedResponse parse_response(std::string_view text, PromptKind kind) {
  const Segment think = scan_segment(text, "think");
  const Segment expl = scan_segment(text, "explicit");
  const Segment answer = scan_segment(text, "answer");

  ParsedResponse out;
  out.think = think.content;
  out.explicit_ref = expl.content;
  out.answer = answer.content;

  switch (kind) {
    case PromptKind::kI2e:
      out.overall_format_ok = think.well_formed() && expl.well_formed() && answer.well_formed() &&
                              precedes(think, expl) && precedes(expl, answer);
      break;
    case PromptKind::kCot:
      out.overall_format_ok = think.well_formed() && answer.well_formed() && expl.absent() &&
                              precedes(think, answer);
      break;
    case PromptKind::kPlain:
      out.overall_format_ok = answer.well_formed();
      break;
  }

  if (out.answer) {
    out.boxes_raw = find_bracketed_boxes(*out.answer);
    out.box_format_ok = !out.boxes_raw.empty();
  } else {
    out.boxes_raw = find_bracketed_boxes(text);
  }
  return out;
}

Box to_box(const RawBox& raw, CoordMode coord, int image_w, int image_h) {
  if (image_w <= 0 || image_h <= 0) throw ArgumentError("to_box: image dimensions must be positive");
  double sx = 1.0, sy = 1.0, div = 1.0;
  switch (coord) {
    case CoordMode::kAbsolutePx: break;
    case CoordMode::kNorm1000:
      sx = image_w;
      sy = image_h;
      div = 1000.0;
      break;
    case CoordMode::kUnitInterval:
      sx = image_w;
      sy = image_h;
      break;
  }
  const double xa = raw[0] * sx / div, ya = raw[1] * sy / div;
  const double xb = raw[2] * sx / div, yb = raw[3] * sy / div;
  Box b{std::min(xa, xb), std::min(ya, yb), std::max(xa, xb), std::max(ya, yb)};
  if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) || !std::isfinite(b.y2)) {
    throw ConversionError("box coordinates are not finite");
  }
  if (b.width() <= 0) throw ConversionError("degenerate box: zero width");
  if (b.height() <= 0) throw ConversionError("degenerate box: zero height");
  return b;
}

Json to_json(const ParsedResponse& p) {
  auto opt = [](const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); };
  Json j;
  j["think"] = opt(p.think);
  j["explicit"] = opt(p.explicit_ref);
  j["answer"] = opt(p.answer);
  Json boxes = Json::array();
  for (const RawBox& b : p.boxes_raw) boxes.push_back(Json::array({b[0], b[1], b[2], b[3]}));
  j["boxes_raw"] = std::move(boxes);
  j["overall_format_ok"] = p.overall_format_ok;
  j["box_format_ok"] = p.box_format_ok;
  return j;
}

}  // namespace vgkit
