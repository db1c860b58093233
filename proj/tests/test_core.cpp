#include <doctest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "vgkit/core.hpp"
#include "vgkit/errors.hpp"

using namespace vgkit;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "vgkit_test_core";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("box validation names the violated inequality") {
  CHECK_NOTHROW(Box{0, 0, 1, 1}.validate());
  CHECK_THROWS_WITH_AS((Box{5, 0, 5, 1}.validate()), "x1 < x2 violated", ValidationError);
  CHECK_THROWS_WITH_AS((Box{0, 3, 1, 2}.validate()), "y1 < y2 violated", ValidationError);
  CHECK_THROWS_AS((Box{0, 0, 101, 10}.validate_within(100, 100)), ValidationError);
  CHECK(Box{2, 3, 6, 11}.area() == doctest::Approx(32));
}

TEST_CASE("category and split names round-trip") {
  for (Category c : kAllCategories) CHECK(parse_category(to_string(c)) == c);
  CHECK(parse_category("social_activity") == Category::kSocialActivity);
  CHECK_THROWS_AS(parse_category("weather"), ValidationError);
  CHECK(parse_split("train") == Split::kTrain);
  CHECK(parse_query_kind("explicit") == QueryKind::kExplicit);
}

TEST_CASE("rle encode matches an independent run scanner and decodes back") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = 1 + static_cast<int>(rng() % 17), h = 1 + static_cast<int>(rng() % 13);
    const double density = (rng() % 100) / 100.0;
    std::bernoulli_distribution bit(density);
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(w) * h);
    for (auto& b : bits) b = bit(rng);
    const RasterMask m(w, h, bits);
    const Rle rle = rle_encode(m);
    CHECK(rle.counts == oracle::runs(bits));
    CHECK(rle_decode(rle) == m);
  }
}

TEST_CASE("rle of all-foreground mask starts with an empty background run") {
  RasterMask m(3, 2, std::vector<std::uint8_t>(6, 1));
  CHECK(rle_encode(m).counts == std::vector<std::uint64_t>{0, 6});
}

TEST_CASE("rle decode rejects counts that do not cover the mask") {
  CHECK_THROWS_AS(rle_decode(Rle{2, 2, {1, 2}}), CodecError);
  CHECK_THROWS_AS(rle_decode(Rle{2, 2, {3, 2}}), CodecError);
  CHECK_THROWS_AS(rle_decode(Rle{0, 2, {}}), CodecError);
  CHECK_THROWS_AS(rle_decode(Rle{2, 2, {~0ULL, 5}}), CodecError);
}

TEST_CASE("rasterize agrees with a per-pixel crossing test") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int w = 20 + static_cast<int>(rng() % 30), h = 20 + static_cast<int>(rng() % 30);
    PolygonSet poly{oracle::random_rings(rng, w, h)};
    const RasterMask m = rasterize(poly, w, h);
    const auto expected = oracle::pnpoly_mask(poly.rings, w, h);
    REQUIRE(m.bits().size() == expected.size());
    CHECK(std::equal(expected.begin(), expected.end(), m.bits().begin()));
  }
}

TEST_CASE("rasterize of a whole-pixel rectangle fills exactly its interior") {
  PolygonSet poly{{{{10, 10}, {20, 10}, {20, 30}, {10, 30}}}};
  const RasterMask m = rasterize(poly, 100, 100);
  CHECK(m.foreground_count() == 200);
  CHECK(m.at(10, 10));
  CHECK(m.at(29, 19));
  CHECK_FALSE(m.at(30, 19));
  CHECK_FALSE(m.at(10, 20));
}

TEST_CASE("overlapping rings cancel under even-odd") {
  PolygonSet poly{{{{0, 0}, {10, 0}, {10, 10}, {0, 10}}, {{0, 0}, {10, 0}, {10, 10}, {0, 10}}}};
  CHECK(rasterize(poly, 10, 10).empty());
}

TEST_CASE("record json round-trips and reports field errors with line numbers") {
  auto rec = oracle::make_record("r1", Category::kDisaster, Box{1.5, 2.25, 30, 40});
  const Json j = to_json(rec);
  CHECK(record_from_json(j) == rec);

  Json bad = j;
  bad["category"] = "weather";
  const std::string text = j.dump() + "\n\n" + bad.dump() + "\n";
  CHECK_THROWS_WITH_AS(parse_dataset(text), doctest::Contains("line 3: category: unknown category 'weather'"), ValidationError);

  Json bad_box = j;
  bad_box["gt_box"] = Json::array({5, 5, 5, 9});
  CHECK_THROWS_WITH_AS(record_from_json(bad_box), "gt_box: x1 < x2 violated", ValidationError);

  Json outside = j;
  outside["gt_box"] = Json::array({5, 5, 500, 9});
  CHECK_THROWS_WITH_AS(record_from_json(outside), doctest::Contains("gt_box"), ValidationError);

  Json missing = j;
  missing.erase("explicit_query");
  CHECK_THROWS_WITH_AS(record_from_json(missing), doctest::Contains("explicit_query"), ValidationError);
}

TEST_CASE("duplicate record ids are rejected") {
  auto rec = oracle::make_record("dup", Category::kSport, Box{0, 0, 5, 5});
  const std::string line = to_json(rec).dump() + "\n";
  CHECK_THROWS_WITH_AS(parse_dataset(line + line), doctest::Contains("duplicate record id 'dup'"), ValidationError);
}

TEST_CASE("dataset and predictions files round-trip through disk") {
  std::vector<GroundingRecord> recs{oracle::make_record("a", Category::kTraffic, Box{0.1, 0.2, 50.3, 60.7}),
                                    oracle::make_record("b", Category::kSecurity, Box{3, 4, 5, 6})};
  recs[1].explicit_query = "café \"quoted\"\nnewline";
  recs[1].gt_mask.rings.clear();
  write_dataset(temp_path("d.jsonl"), recs);
  CHECK(load_dataset(temp_path("d.jsonl")) == recs);

  Prediction p1{"a", QueryKind::kImplicit, "<answer>[1,2,3,4]</answer>", Box{1, 2, 3, 4}, std::nullopt};
  Prediction p2{"b", QueryKind::kExplicit, "no box here", std::nullopt, RasterMask(4, 3)};
  p2.mask->set(1, 2);
  std::vector<Prediction> preds{p1, p2};
  write_predictions(temp_path("p.jsonl"), preds);
  CHECK(load_predictions(temp_path("p.jsonl")) == preds);
}

TEST_CASE("sha256 matches the published test vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("reading a missing file is a validation error") {
  CHECK_THROWS_AS(read_file("/nonexistent/vgkit/file"), ValidationError);
}

TEST_CASE("rasterize reference shapes") {
  PolygonSet square{{{{0, 0}, {4, 0}, {4, 4}, {0, 4}}}};
  CHECK(rasterize(square, 4, 4).foreground_count() == 16);

  // Thin sliver between pixel centres of the first column and row.
  PolygonSet sliver{{{{0.6, 0.6}, {0.9, 0.6}, {0.9, 0.9}}}};
  CHECK(rasterize(sliver, 4, 4).empty());
  CHECK(oracle::pnpoly_mask(sliver.rings, 4, 4) == std::vector<std::uint8_t>(16, 0));

  PolygonSet two{{{{0, 0}, {2, 0}, {2, 2}, {0, 2}}, {{5, 5}, {8, 5}, {8, 7}, {5, 7}}}};
  CHECK(rasterize(two, 10, 10).foreground_count() == 4 + 6);
}

TEST_CASE("rle of an all-background mask is a single run") {
  CHECK(rle_encode(RasterMask(2, 2)).counts == std::vector<std::uint64_t>{4});
  CHECK(rle_encode(RasterMask(2, 2, std::vector<std::uint8_t>(4, 1))).counts == std::vector<std::uint64_t>{0, 4});
}
