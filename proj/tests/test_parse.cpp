#include <doctest.h>

#include "vgkit/errors.hpp"
#include "vgkit/parse.hpp"

using namespace vgkit;

namespace {

const char* kDroneImplicit =
    "<think> The vehicle that was rear-ended is the one with the orange hood.</think><explicit> orange "
    "hood</explicit><answer>[329,210,435,282]</answer>";

const char* kTaggedReply =
    "<think>To find \"The area to the right in the middle, surrounded by barricades,\" I need to identify the central "
    "part of the image where there is a clear division marked by what appears to be orange cones or similar "
    "markers.</think><answer>[476,258,803,531]</answer>";

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("i2e prompt carries all six delimiters and the query once") {
  const std::string q = "The vehicle that was rear-ended";
  const std::string p = render_prompt(PromptTemplate::make(PromptKind::kI2e), q, CoordMode::kAbsolutePx);
  for (const char* tag : {"<think>", "</think>", "<explicit>", "</explicit>", "<answer>", "</answer>"}) {
    CHECK(p.find(tag) != std::string::npos);
  }
  CHECK(count(p, q) == 1);
  CHECK(p.find("[x1, y1, x2, y2]") != std::string::npos);
  CHECK(p.find("<think>") < p.find("<explicit>"));
  CHECK(p.find("<explicit>") < p.find("<answer>"));
}

TEST_CASE("cot prompt has think and answer delimiters but no explicit one") {
  const std::string p = render_prompt(PromptTemplate::make(PromptKind::kCot), "q", CoordMode::kNorm1000);
  CHECK(p.find("<think>") != std::string::npos);
  CHECK(p.find("<answer>") != std::string::npos);
  CHECK(p.find("explicit>") == std::string::npos);
  CHECK(p.find("[0, 1000]") != std::string::npos);
}

TEST_CASE("few-shot exemplars precede the target query in order") {
  auto tpl = PromptTemplate::make(PromptKind::kCot, {{"first shot query", "<answer>[1,2,3,4]</answer>"},
                                                     {"second shot query", "<answer>[5,6,7,8]</answer>"}});
  const std::string p = render_prompt(tpl, "target query", CoordMode::kAbsolutePx);
  const auto a = p.find("first shot query"), b = p.find("second shot query"), t = p.find("target query");
  REQUIRE(a != std::string::npos);
  REQUIRE(b != std::string::npos);
  CHECK(a < b);
  CHECK(b < t);
  CHECK(p == render_prompt(tpl, "target query", CoordMode::kAbsolutePx));
}

TEST_CASE("queries with braces are not re-expanded") {
  const std::string p = render_prompt(PromptTemplate::make(PromptKind::kPlain), "the {QUERY} sign", CoordMode::kAbsolutePx);
  CHECK(count(p, "the {QUERY} sign") == 1);
}

TEST_CASE("plain prompts reject shots unless allowed") {
  CHECK_THROWS_AS(PromptTemplate::make(PromptKind::kPlain, {{"q", "a"}}), ValidationError);
  CHECK_NOTHROW(PromptTemplate::make(PromptKind::kPlain, {{"q", "a"}}, true));
  CHECK_THROWS_AS(render_prompt(PromptTemplate::make(PromptKind::kI2e), "", CoordMode::kAbsolutePx), ArgumentError);
}

TEST_CASE("template documents can be swapped in") {
  const TemplateSet ts = TemplateSet::parse(R"({"version":"9","shot_format":"[{SHOT_QUERY}]",
    "coord_notes":{"absolute_px":"px","norm_1000":"k","unit_interval":"u"},
    "templates":{"plain":"P {QUERY} {COORD_NOTE}","cot":"C {SHOTS}{QUERY}","i2e":"I {QUERY}"}})");
  CHECK(ts.version() == "9");
  CHECK(render_prompt(PromptTemplate::make(PromptKind::kPlain), "x", CoordMode::kUnitInterval, ts) == "P x u");
  CHECK(render_prompt(PromptTemplate::make(PromptKind::kCot, {{"s", "a"}}), "x", CoordMode::kUnitInterval, ts) ==
        "C [s]x");
  CHECK_THROWS_AS(TemplateSet::parse(R"({"version":"1"})"), ValidationError);
  CHECK(TemplateSet::builtin().version() == "1.0");
}

TEST_CASE("well-formed i2e reply") {
  const ParsedResponse p = parse_response(kDroneImplicit, PromptKind::kI2e);
  CHECK(p.overall_format_ok);
  CHECK(p.box_format_ok);
  CHECK(*p.explicit_ref == "orange hood");
  CHECK(*p.think == "The vehicle that was rear-ended is the one with the orange hood.");
  REQUIRE(p.boxes_raw.size() == 1);
  CHECK(p.boxes_raw[0] == RawBox{329, 210, 435, 282});
}

TEST_CASE("cot-style reply fails the i2e format but keeps its box") {
  const ParsedResponse p = parse_response(kTaggedReply, PromptKind::kI2e);
  CHECK_FALSE(p.overall_format_ok);
  CHECK(p.box_format_ok);
  CHECK_FALSE(p.explicit_ref.has_value());
  REQUIRE(p.boxes_raw.size() == 1);
  CHECK(p.boxes_raw[0] == RawBox{476, 258, 803, 531});
  CHECK(parse_response(kTaggedReply, PromptKind::kCot).overall_format_ok);
}

TEST_CASE("free text has no flags and no boxes") {
  const ParsedResponse p = parse_response("no tags, no boxes", PromptKind::kI2e);
  CHECK_FALSE(p.overall_format_ok);
  CHECK_FALSE(p.box_format_ok);
  CHECK(p.boxes_raw.empty());
}

TEST_CASE("boxes outside an answer segment are collected but do not set box_format_ok") {
  const ParsedResponse p = parse_response("I think it is [1, 2, 3, 4] or maybe [5,6,7,8].", PromptKind::kI2e);
  CHECK_FALSE(p.box_format_ok);
  REQUIRE(p.boxes_raw.size() == 2);
  CHECK(p.boxes_raw[1] == RawBox{5, 6, 7, 8});
}

TEST_CASE("format flags are independent of each other") {
  const ParsedResponse tags_no_box =
      parse_response("<think>a</think><explicit>b</explicit><answer>none</answer>", PromptKind::kI2e);
  CHECK(tags_no_box.overall_format_ok);
  CHECK_FALSE(tags_no_box.box_format_ok);

  const ParsedResponse wrong_order =
      parse_response("<explicit>b</explicit><think>a</think><answer>[1,2,3,4]</answer>", PromptKind::kI2e);
  CHECK_FALSE(wrong_order.overall_format_ok);
  CHECK(wrong_order.box_format_ok);
}

TEST_CASE("duplicate delimiters break the format but first match is kept") {
  const ParsedResponse p = parse_response(
      "<think>a</think><explicit>first</explicit><explicit>second</explicit><answer>[1,2,3,4]</answer>",
      PromptKind::kI2e);
  CHECK_FALSE(p.overall_format_ok);
  CHECK(*p.explicit_ref == "first");
  CHECK(p.box_format_ok);
}

TEST_CASE("box grammar: whitespace, decimals, negatives, no exponents") {
  auto boxes = find_bracketed_boxes("[ 1 ,2.5,\n-3 , 4 ] [1e3,2,3,4] [1,2,3] [1,2,3,4,5] [.5,1,2,3] [7,8,9,10]");
  REQUIRE(boxes.size() == 2);
  CHECK(boxes[0] == RawBox{1, 2.5, -3, 4});
  CHECK(boxes[1] == RawBox{7, 8, 9, 10});
}

TEST_CASE("box order follows text order") {
  auto boxes = find_bracketed_boxes("<answer>[9,9,10,10] then [1,1,2,2] then [5,5,6,6]</answer>");
  REQUIRE(boxes.size() == 3);
  CHECK(boxes[0][0] == 9);
  CHECK(boxes[1][0] == 1);
  CHECK(boxes[2][0] == 5);
}

TEST_CASE("to_box conversions") {
  CHECK(to_box({329, 210, 435, 282}, CoordMode::kAbsolutePx, 1280, 720) == Box{329, 210, 435, 282});
  CHECK(to_box({500, 500, 1000, 1000}, CoordMode::kNorm1000, 200, 100) == Box{100, 50, 200, 100});
  CHECK(to_box({0.25, 0.5, 0.75, 1.0}, CoordMode::kUnitInterval, 200, 100) == Box{50, 50, 150, 100});
  CHECK(to_box({10, 50, 2, 5}, CoordMode::kAbsolutePx, 100, 100) == Box{2, 5, 10, 50});
  CHECK_THROWS_WITH_AS(to_box({10, 10, 10, 50}, CoordMode::kAbsolutePx, 100, 100), "degenerate box: zero width",
                       ConversionError);
  CHECK_THROWS_AS(to_box({10, 10, 10, 50}, CoordMode::kNorm1000, 100, 100), ConversionError);
}

TEST_CASE("to_box norm_1000 is scale-equivariant in image size") {
  const RawBox raw{123, 456, 789, 901};
  const Box a = to_box(raw, CoordMode::kNorm1000, 640, 480);
  const Box b = to_box(raw, CoordMode::kNorm1000, 1280, 960);
  CHECK(b.x1 == doctest::Approx(2 * a.x1));
  CHECK(b.y1 == doctest::Approx(2 * a.y1));
  CHECK(b.x2 == doctest::Approx(2 * a.x2));
  CHECK(b.y2 == doctest::Approx(2 * a.y2));
}

TEST_CASE("an exemplar reply echoed from a rendered prompt parses back to its segments") {
  const std::string exemplar =
      "<think> the cones form a ring </think> <explicit> open space ringed by red cones </explicit> "
      "<answer>[10,20,30,40]</answer>";
  const std::string prompt =
      render_prompt(PromptTemplate::make(PromptKind::kI2e, {{"the fenced area", exemplar}}), "q", CoordMode::kAbsolutePx);
  const auto at = prompt.find(exemplar);
  REQUIRE(at != std::string::npos);
  const ParsedResponse p = parse_response(prompt.substr(at, exemplar.size()), PromptKind::kI2e);
  CHECK(p.overall_format_ok);
  CHECK(*p.think == "the cones form a ring");
  CHECK(*p.explicit_ref == "open space ringed by red cones");
  CHECK(p.boxes_raw[0] == RawBox{10, 20, 30, 40});
}
