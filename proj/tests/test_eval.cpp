#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "vgkit/errors.hpp"
#include "vgkit/eval.hpp"

using namespace vgkit;

namespace {

std::map<Category, double> row(std::array<double, 6> v) {
  std::map<Category, double> m;
  for (std::size_t i = 0; i < 6; ++i) m[kAllCategories[i]] = v[i];
  return m;
}

Prediction pred(const std::string& id, QueryKind k, std::optional<Box> b) {
  return Prediction{id, k, "", b, std::nullopt};
}

std::vector<GroundingRecord> synthetic_records(int n) {
  std::vector<GroundingRecord> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(oracle::make_record("r" + std::to_string(i), kAllCategories[i % 6], Box{10, 10, 50, 50}));
  }
  return out;
}

RasterMask filled(int w, int h, int count) {
  RasterMask m(w, h);
  for (int i = 0; i < count; ++i) m.set(i / w, i % w);
  return m;
}

}  // namespace

TEST_CASE("macro average of published rows") {
  CHECK(std::abs(macro_average(row({57.14, 52.08, 45.05, 43.40, 70.66, 43.95})) - 52.05) <= 0.005);
  CHECK(std::abs(macro_average(row({35.71, 41.32, 34.07, 47.17, 63.64, 40.76})) - 43.78) <= 0.005);
  CHECK(std::abs(macro_average(row({50.00, 41.67, 38.46, 41.51, 61.57, 40.76})) - 45.66) <= 0.005);
  CHECK_THROWS_AS(macro_average({}), ArgumentError);
}

TEST_CASE("macro average ignores per-category sample counts") {
  auto recs = synthetic_records(6);
  for (int extra = 0; extra < 30; ++extra) {
    recs.push_back(oracle::make_record("t" + std::to_string(extra), Category::kTraffic, Box{10, 10, 50, 50}));
  }
  std::vector<bool> correct(recs.size(), false);
  correct[0] = true;  // one traffic hit among 31 traffic records
  correct[1] = true;  // the only disaster record
  const AccuracySlice s = summarize_accuracy(recs, correct);
  CHECK(s.per_category_acc.at(Category::kTraffic) == doctest::Approx(1.0 / 31));
  CHECK(s.per_category_acc.at(Category::kDisaster) == 1.0);
  CHECK(s.macro_avg == doctest::Approx((1.0 / 31 + 1.0) / 6));
}

TEST_CASE("acc_at_iou basics") {
  const auto recs = synthetic_records(12);
  std::vector<Prediction> perfect, none;
  for (const auto& r : recs) perfect.push_back(pred(r.id, QueryKind::kImplicit, r.gt_box));
  const AccuracySlice all = acc_at_iou(perfect, recs);
  CHECK(all.macro_avg == 1.0);
  for (const auto& [c, a] : all.per_category_acc) CHECK(a == 1.0);

  // Missing predictions and missing boxes count as wrong.
  std::vector<Prediction> half(perfect.begin(), perfect.begin() + 6);
  half[0].box.reset();
  CHECK(acc_at_iou(half, recs).macro_avg == doctest::Approx(5.0 / 12));

  auto unknown = perfect;
  unknown.push_back(pred("ghost", QueryKind::kImplicit, Box{0, 0, 1, 1}));
  CHECK_THROWS_WITH_AS(acc_at_iou(unknown, recs), doctest::Contains("ghost"), ValidationError);

  auto mixed = perfect;
  mixed[0].query_kind = QueryKind::kExplicit;
  CHECK_THROWS_AS(acc_at_iou(mixed, recs), ValidationError);
  CHECK(acc_at_iou(mixed, recs, 0.5, QueryKind::kExplicit).macro_avg == doctest::Approx(1.0 / 6 / 2 * 1.0));

  auto dup = perfect;
  dup.push_back(perfect[0]);
  CHECK_THROWS_AS(acc_at_iou(dup, recs), ValidationError);
}

TEST_CASE("acc_at_iou threshold is strict") {
  const auto rec = oracle::make_record("x", Category::kSport, Box{0, 0, 10, 1});
  const std::vector<GroundingRecord> recs{rec};
  const std::vector<Prediction> p{pred("x", QueryKind::kImplicit, Box{0, 0, 5, 1})};
  CHECK(acc_at_iou(p, recs, 0.5).macro_avg == 0.0);
  CHECK(acc_at_iou(p, recs, 0.49).macro_avg == 1.0);
}

TEST_CASE("hard protocol") {
  const auto recs = synthetic_records(6);
  std::vector<Prediction> ex, im;
  for (const auto& r : recs) {
    ex.push_back(pred(r.id, QueryKind::kExplicit, r.gt_box));
    im.push_back(pred(r.id, QueryKind::kImplicit, r.gt_box));
  }
  im[2].box = Box{60, 60, 90, 90};
  const AccuracySlice h = hard_protocol(ex, im, recs);
  CHECK(h.per_category_acc.at(kAllCategories[2]) == 0.0);
  CHECK(h.macro_avg == doctest::Approx(5.0 / 6));

  auto short_im = im;
  short_im.erase(short_im.begin() + 4);
  CHECK_THROWS_WITH_AS(hard_protocol(ex, short_im, recs), doctest::Contains("missing implicit predictions for: r4"),
                       ValidationError);
}

TEST_CASE("hard accuracy never beats either single-query accuracy") {
  std::mt19937_64 rng(47);
  const auto recs = synthetic_records(60);
  std::uniform_int_distribution<int> off(0, 40);
  for (int t = 0; t < 100; ++t) {
    std::vector<Prediction> ex, im;
    for (const auto& r : recs) {
      auto jitter = [&]() -> std::optional<Box> {
        if (rng() % 10 == 0) return std::nullopt;
        const double d = off(rng);
        return Box{10 + d, 10, 50 + d, 50};
      };
      ex.push_back(pred(r.id, QueryKind::kExplicit, jitter()));
      im.push_back(pred(r.id, QueryKind::kImplicit, jitter()));
    }
    const double hard = hard_protocol(ex, im, recs).macro_avg;
    CHECK(hard <= acc_at_iou(ex, recs).macro_avg + 1e-15);
    CHECK(hard <= acc_at_iou(im, recs).macro_avg + 1e-15);
  }
}

TEST_CASE("consistency") {
  const auto recs = synthetic_records(4);
  std::vector<Prediction> ex, im;
  std::vector<Prediction> same;
  for (const auto& r : recs) {
    ex.push_back(pred(r.id, QueryKind::kExplicit, r.gt_box));
    same.push_back(pred(r.id, QueryKind::kImplicit, r.gt_box));
  }
  CHECK(consistency(ex, same) == 1.0);
  CHECK_THROWS_WITH_AS(consistency(ex, ex), doctest::Contains("expected implicit"), ValidationError);

  // Hand-built pairs: IoU 1, 1/3, exactly 0.5, and no box.
  im.push_back(pred("r0", QueryKind::kImplicit, Box{10, 10, 50, 50}));
  im.push_back(pred("r1", QueryKind::kImplicit, Box{30, 10, 70, 50}));
  im.push_back(pred("r2", QueryKind::kImplicit, Box{10, 10, 30, 50}));
  im.push_back(pred("r3", QueryKind::kImplicit, std::nullopt));
  CHECK(consistency(ex, im) == 0.5);

  std::vector<Prediction> far;
  for (const auto& r : recs) far.push_back(pred(r.id, QueryKind::kImplicit, Box{60, 60, 90, 90}));
  CHECK(consistency(ex, far) == 0.0);
}

TEST_CASE("mask metrics separate mIoU from oIoU") {
  // Sample 1: perfect 10-pixel mask. Sample 2: disjoint masks whose union is 1000 pixels.
  RasterMask a(50, 40);
  RasterMask gt2(50, 40), pred2(50, 40);
  for (int i = 0; i < 500; ++i) gt2.set(i / 50, i % 50);
  for (int i = 500; i < 1000; ++i) pred2.set(i / 50, i % 50);
  const std::vector<MaskSample> samples{{"s1", filled(50, 40, 10), filled(50, 40, 10)}, {"s2", pred2, gt2}};
  const PixelMetrics m = mask_metrics(samples);
  CHECK(m.miou == 0.5);
  CHECK(m.oiou == 10.0 / 1010.0);
  CHECK(m.acc05 == 0.5);

  std::vector<MaskSample> reversed(samples.rbegin(), samples.rend());
  const PixelMetrics r = mask_metrics(reversed);
  CHECK(r.miou == m.miou);
  CHECK(r.oiou == m.oiou);

  const std::vector<MaskSample> same{{"a", filled(5, 5, 7), filled(5, 5, 7)}, {"b", filled(5, 5, 3), filled(5, 5, 3)}};
  const PixelMetrics s = mask_metrics(same);
  CHECK(s.miou == 1.0);
  CHECK(s.oiou == 1.0);
  CHECK(s.acc05 == 1.0);

  const std::vector<MaskSample> empty_pred{{"a", RasterMask(5, 5), filled(5, 5, 7)}};
  CHECK(mask_metrics(empty_pred).miou == 0.0);
  CHECK(mask_metrics(empty_pred).acc05 == 0.0);
}

TEST_CASE("mask accuracy does not increase with the threshold") {
  std::vector<MaskSample> samples;
  for (int k = 1; k <= 10; ++k) samples.push_back({"s", filled(10, 10, k * 10), filled(10, 10, 100)});
  double prev = 2;
  for (double thr = 0.0; thr <= 1.0; thr += 0.05) {
    const double acc = mask_metrics(samples, thr).acc05;
    CHECK(acc <= prev);
    prev = acc;
  }
}

TEST_CASE("mask samples come from predictions and rasterized polygons") {
  const auto recs = synthetic_records(2);
  Prediction p = pred("r0", QueryKind::kImplicit, Box{10, 10, 50, 50});
  p.mask = rasterize(recs[0].gt_mask, 100, 100);
  const std::vector<Prediction> preds{p};
  const auto samples = build_mask_samples(preds, recs);
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].pred == samples[0].gt);
  CHECK(samples[1].pred.empty());
  const PixelMetrics m = mask_metrics(samples);
  CHECK(m.miou == 0.5);
}

TEST_CASE("coverage histogram") {
  const std::vector<double> ratios{0.0005, 0.005, 0.05, 0.5};
  const CoverageHistogram h = coverage_histogram(ratios);
  CHECK(h.cumulative_share[0] == 0.25);
  CHECK(h.cumulative_share[1] == 0.5);
  CHECK(h.cumulative_share[2] == 0.75);
  CHECK(h.decade_counts == std::array<std::size_t, 5>{0, 1, 1, 1, 1});

  const std::vector<double> full{1.0, 1.0};
  const CoverageHistogram f = coverage_histogram(full);
  CHECK(f.cumulative_share == std::array<double, 3>{0, 0, 0});
  CHECK(f.decade_counts[4] == 2);

  CHECK_THROWS_WITH_AS(coverage_histogram(std::vector<double>{}), "empty dataset", ValidationError);
  CHECK_THROWS_WITH_AS(coverage_histogram(std::vector<GroundingRecord>{}), "empty dataset", ValidationError);
}

TEST_CASE("coverage histogram from rasterized records") {
  // 100x100 images; rectangles of 5, 50, 500 and 5000 pixels.
  const std::vector<GroundingRecord> recs{
      oracle::make_record("a", Category::kTraffic, Box{0, 0, 5, 1}),
      oracle::make_record("b", Category::kTraffic, Box{0, 0, 50, 1}),
      oracle::make_record("c", Category::kTraffic, Box{0, 0, 50, 10}),
      oracle::make_record("d", Category::kTraffic, Box{0, 0, 100, 50})};
  const CoverageHistogram h = coverage_histogram(recs);
  CHECK(h.cumulative_share == std::array<double, 3>{0.25, 0.5, 0.75});
}

TEST_CASE("report json has a stable layout") {
  const auto recs = synthetic_records(6);
  std::vector<Prediction> p;
  for (const auto& r : recs) p.push_back(pred(r.id, QueryKind::kImplicit, r.gt_box));
  EvalReport rep;
  rep.accuracy = acc_at_iou(p, recs);
  rep.dataset_sha256 = "abc";
  const Json j = to_json(rep);
  CHECK(j["version"] == kReportSchemaVersion);
  CHECK(j["accuracy"]["macro_avg"] == 1.0);
  CHECK(j.dump() == to_json(rep).dump());
  const std::string grid = format_grid(*rep.accuracy, "ours");
  CHECK(grid.find("100.00") != std::string::npos);
  CHECK(grid.find("AVG") != std::string::npos);
}
