#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "testutil.hpp"
#include "tokdet/eval_metrics.hpp"

using namespace tokdet;

namespace {

LabeledBox lbox(double x0, double y0, double x1, double y1, std::string cat) {
    return LabeledBox{Box{x0, y0, x1, y1}, std::move(cat)};
}

} // namespace

TEST_CASE("two ground truths against three predictions pin the F1 endpoints") {
    // Both GTs are recovered at IoU 0.5 (one exactly, one at 0.7), and one
    // prediction is junk: recall 1, precision 2/3, F1 exactly 0.8. Neither
    // hit survives IoU 0.95 except the exact copy, and 1 match of 2 GTs and
    // 3 preds gives F1 0.5 at best; the 0.7-overlap pair dies first.
    std::vector<LabeledBox> gts = {lbox(0, 0, 10, 10, "a"), lbox(20, 20, 30, 30, "a")};
    std::vector<LabeledBox> preds = {
        lbox(0, 0, 10, 10, "a"),   // IoU 1.0
        lbox(20, 20, 30, 27, "a"), // IoU 0.7
        lbox(50, 50, 60, 60, "a"), // IoU 0.0
    };
    DetectionEvalResult result = detection_f1(preds, gts);
    CHECK(result.f1_at_50 == 0.8);
    CHECK(result.per_threshold.front().recall == 1.0);
    CHECK(result.per_threshold.front().precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    // At 0.95 only the exact copy matches: recall 1/2, precision 1/3.
    CHECK(result.f1_at_95 == doctest::Approx(0.4).epsilon(1e-12));

    // Push the second prediction fully off target and 0.95 goes to exact 0.
    preds[1] = lbox(200, 200, 210, 210, "a");
    preds[0] = lbox(0, 0, 10, 9.8, "a"); // IoU 0.98 -> still matches at 0.95? no: 9.8*10/100 = 0.98
    DetectionEvalResult strict = detection_f1(preds, gts);
    CHECK(strict.f1_at_50 > 0.0);
    preds[0] = lbox(0, 0, 10, 9.0, "a"); // IoU 0.9, below the 0.95 gate
    DetectionEvalResult none = detection_f1(preds, gts);
    CHECK(none.f1_at_95 == 0.0);
}

TEST_CASE("greedy matching is one-to-one with deterministic tie-breaks") {
    std::vector<LabeledBox> gts = {lbox(0, 0, 10, 10, "a"), lbox(0, 0, 10, 10, "a")};
    std::vector<LabeledBox> preds = {lbox(0, 0, 10, 10, "a"), lbox(0, 0, 10, 10, "a")};
    auto matches = match_detections(preds, gts, 0.5);
    REQUIRE(matches.size() == 2);
    CHECK(matches[0].gt_index == 0);
    CHECK(matches[0].pred_index == 0);
    CHECK(matches[1].gt_index == 1);
    CHECK(matches[1].pred_index == 1);

    // A single prediction cannot serve two ground truths.
    std::vector<LabeledBox> one_pred = {lbox(0, 0, 10, 10, "a")};
    CHECK(match_detections(one_pred, gts, 0.5).size() == 1);

    // Labels gate candidate pairs entirely.
    std::vector<LabeledBox> wrong = {lbox(0, 0, 10, 10, "b")};
    CHECK(match_detections(wrong, gts, 0.5).empty());

    CHECK_THROWS_AS(match_detections(preds, gts, 0.0), InvalidInputError);
    CHECK_THROWS_AS(match_detections(preds, gts, 1.5), InvalidInputError);
}

TEST_CASE("higher-IoU pairs win the greedy queue") {
    // GT0 overlaps pred1 at 1.0 and pred0 at ~0.53; GT1 overlaps pred0 only.
    // Greedy must give pred1 to GT0, leaving pred0 free for GT1.
    std::vector<LabeledBox> gts = {lbox(0, 0, 10, 10, "a"), lbox(0, 12, 10, 22, "a")};
    std::vector<LabeledBox> preds = {lbox(0, 5, 10, 18, "a"), lbox(0, 0, 10, 10, "a")};
    auto matches = match_detections(preds, gts, 0.3);
    REQUIRE(matches.size() == 2);
    CHECK(matches[0].iou == doctest::Approx(1.0));
    CHECK(matches[0].gt_index == 0);
    CHECK(matches[0].pred_index == 1);
    CHECK(matches[1].gt_index == 1);
    CHECK(matches[1].pred_index == 0);
}

TEST_CASE("F1 is non-increasing in the IoU threshold on random sets") {
    testutil::Rng rng(0x600dULL);
    const std::vector<std::string> cats = {"a", "b", "c"};
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<LabeledBox> gts, preds;
        int n = rng.next_int(1, 4);
        int m = rng.next_int(0, 5);
        for (int j = 0; j < n; ++j) {
            gts.push_back({testutil::random_box(rng, 30.0),
                           cats[static_cast<std::size_t>(rng.next_int(0, 2))]});
        }
        for (int i = 0; i < m; ++i) {
            preds.push_back({testutil::random_box(rng, 30.0),
                             cats[static_cast<std::size_t>(rng.next_int(0, 2))]});
        }
        DetectionEvalResult result = detection_f1(preds, gts);
        REQUIRE(result.per_threshold.size() == 10);
        CHECK(result.f1_at_50 == result.per_threshold.front().f1);
        CHECK(result.f1_at_95 == result.per_threshold.back().f1);
        double mean = 0.0;
        for (std::size_t k = 0; k < 10; ++k) {
            mean += result.per_threshold[k].f1;
            if (k > 0) {
                CHECK(result.per_threshold[k].f1 <= result.per_threshold[k - 1].f1 + 1e-12);
                CHECK(result.per_threshold[k].recall <=
                      result.per_threshold[k - 1].recall + 1e-12);
            }
        }
        CHECK(result.f1_miou == doctest::Approx(mean / 10.0).epsilon(1e-12));
    }
}

TEST_CASE("macro averaging spans GT categories only") {
    // "a" is perfect, "b" has a GT but no predictions, and "c" appears only
    // as a prediction, so it must not join the average.
    std::vector<LabeledBox> gts = {lbox(0, 0, 10, 10, "a"), lbox(20, 20, 30, 30, "b")};
    std::vector<LabeledBox> preds = {lbox(0, 0, 10, 10, "a"), lbox(40, 40, 50, 50, "c")};
    DetectionEvalResult result = detection_f1(preds, gts);
    CHECK(result.per_threshold.front().recall == doctest::Approx(0.5));
    CHECK(result.per_threshold.front().precision == doctest::Approx(0.5));
    CHECK(result.f1_at_50 == doctest::Approx(0.5));
}

TEST_CASE("dataset evaluation pools per-category counts across images") {
    // One image hits, the other misses: per-category recall pools to 1/2,
    // and matching never crosses image boundaries.
    std::vector<ImageDetections> images(2);
    images[0].gts = {lbox(0, 0, 10, 10, "a")};
    images[0].preds = {lbox(0, 0, 10, 10, "a")};
    images[1].gts = {lbox(0, 0, 10, 10, "a")};
    images[1].preds = {lbox(100, 100, 110, 110, "a")};
    DetectionEvalResult result = detection_f1(images);
    CHECK(result.per_threshold.front().recall == doctest::Approx(0.5));
    CHECK(result.per_threshold.front().precision == doctest::Approx(0.5));

    std::vector<ImageDetections> empty_gt(1);
    empty_gt[0].preds = {lbox(0, 0, 10, 10, "a")};
    CHECK_THROWS_AS(detection_f1(empty_gt), UndefinedRecallError);
}

TEST_CASE("confidence sweep finds the cutoff that drops junk") {
    ScoredImageDetections image;
    image.gts = {lbox(0, 0, 10, 10, "a")};
    image.preds = {lbox(0, 0, 10, 10, "a"), lbox(50, 50, 60, 60, "a")};
    image.confidences = {0.9, 0.3};
    SweepResult sweep = score_threshold_sweep({image});
    REQUIRE(sweep.curve.size() == 101);
    // Up to 0.30 both predictions survive (F1 2/3); from 0.31 to 0.90 only
    // the true hit stays (F1 1); past 0.90 nothing is left (F1 0).
    CHECK(sweep.best_f1 == doctest::Approx(1.0));
    CHECK(sweep.best_threshold == doctest::Approx(0.31));
    CHECK(sweep.curve[0].eval.f1_at_50 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(sweep.curve[30].eval.f1_at_50 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(sweep.curve[31].eval.f1_at_50 == doctest::Approx(1.0));
    CHECK(sweep.curve[90].eval.f1_at_50 == doctest::Approx(1.0));
    CHECK(sweep.curve[91].eval.f1_at_50 == 0.0);

    ScoredImageDetections bad = image;
    bad.confidences = {0.9};
    CHECK_THROWS_AS(score_threshold_sweep({bad}), InvalidInputError);
    bad.confidences = {0.9, 1.5};
    CHECK_THROWS_AS(score_threshold_sweep({bad}), InvalidInputError);
}

TEST_CASE("point F1 uses containment with greedy index order") {
    Mask left(40, 40), right(40, 40);
    for (int y = 0; y < 40; ++y) {
        for (int x = 0; x < 18; ++x) left.set(x, y, true);
        for (int x = 22; x < 40; ++x) right.set(x, y, true);
    }
    std::vector<ImagePointEval> images(1);
    images[0].gts = {{&left, "p"}, {&right, "p"}};
    images[0].preds = {{Point{5.0, 5.0}, "p"}};
    PrF1 r = point_f1(images);
    CHECK(r.recall == doctest::Approx(0.5));
    CHECK(r.precision == doctest::Approx(1.0));
    CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    // A wrong-label point costs precision and can never match.
    images[0].preds.push_back({Point{30.0, 5.0}, "q"});
    PrF1 r2 = point_f1(images);
    CHECK(r2.recall == doctest::Approx(0.5));
    CHECK(r2.precision == doctest::Approx(1.0)); // "q" has no GT, so it is excluded

    // Same label but outside every mask: precision drops.
    images[0].preds[1] = {Point{20.0, 5.0}, "p"};
    PrF1 r3 = point_f1(images);
    CHECK(r3.precision == doctest::Approx(0.5));

    CHECK_THROWS_AS(point_f1({ImagePointEval{}}), UndefinedRecallError);
}

TEST_CASE("count MAE averages absolute per-image differences") {
    std::map<std::string, std::int64_t> gt = {{"img0", 3}, {"img1", 1}};
    std::map<std::string, std::int64_t> pred = {{"img0", 1}, {"img1", 2}};
    CHECK(count_mae(pred, gt) == doctest::Approx(1.5));
    CHECK(count_mae(gt, gt) == 0.0);

    std::map<std::string, std::int64_t> missing = {{"img0", 1}, {"other", 2}};
    CHECK_THROWS_AS(count_mae(missing, gt), InvalidInputError);
    CHECK_THROWS_AS(count_mae({}, {}), InvalidInputError);
}

TEST_CASE("GUI accuracy is the closed-box hit fraction over queries") {
    std::vector<Box> targets = {Box{0, 0, 10, 10}, Box{20, 20, 30, 30},
                                Box{0, 0, 10, 10}, Box{5, 5, 6, 6}};
    std::vector<Point> preds = {Point{5, 5}, Point{19.9, 25}, Point{10, 10}, Point{5.5, 5.7}};
    CHECK(gui_accuracy(preds, targets) == doctest::Approx(0.75));
    CHECK_THROWS_AS(gui_accuracy({Point{0, 0}}, {}), InvalidInputError);
    CHECK_THROWS_AS(gui_accuracy({}, {}), InvalidInputError);
}

TEST_CASE("OKS hits exp(-1) on the calibrated displacement") {
    KeypointInstance gt;
    gt.box = Box{0, 0, 10, 10}; // area 100
    gt.keypoints = {{"nose", Point{5, 5}, true}};
    KeypointInstance pred;
    pred.box = gt.box;
    // d^2 = 2 and 2 * s^2 * k^2 = 2 * 100 * 0.01 = 2, so OKS = exp(-1).
    pred.keypoints = {{"nose", Point{6, 6}, true}};
    CHECK(std::abs(oks(pred, gt) - std::exp(-1.0)) <= 1e-12);

    // Exact hit scores 1; a name the prediction lacks contributes 0.
    pred.keypoints = {{"nose", Point{5, 5}, true}};
    CHECK(oks(pred, gt) == doctest::Approx(1.0));
    gt.keypoints.push_back({"tail", Point{9, 9}, true});
    CHECK(oks(pred, gt) == doctest::Approx(0.5));

    // Invisible GT keypoints leave the average.
    gt.keypoints[1].visible = false;
    CHECK(oks(pred, gt) == doctest::Approx(1.0));

    // Per-name constants override the fallback.
    OksConstants constants;
    constants.per_name["nose"] = 0.2;
    pred.keypoints[0].point = Point{6, 6};
    gt.keypoints = {{"nose", Point{5, 5}, true}};
    CHECK(oks(pred, gt, constants) == doctest::Approx(std::exp(-2.0 / 8.0)).epsilon(1e-12));

    KeypointInstance blind = gt;
    for (auto& kp : blind.keypoints) kp.visible = false;
    CHECK_THROWS_AS(oks(pred, blind), UndefinedOksError);

    KeypointInstance flat = gt;
    flat.box = Box{0, 0, 0, 10};
    CHECK_THROWS_AS(oks(pred, flat), UndefinedOksError);
}

TEST_CASE("keypoint F1 matches instances greedily by OKS") {
    ImageKeypoints image;
    KeypointInstance gt;
    gt.box = Box{0, 0, 10, 10};
    gt.keypoints = {{"nose", Point{5, 5}, true}};
    image.gts = {gt};
    KeypointInstance pred = gt;
    image.preds = {pred};
    PrF1 perfect = keypoint_f1({image}, 0.5);
    CHECK(perfect.recall == doctest::Approx(1.0));
    CHECK(perfect.precision == doctest::Approx(1.0));
    CHECK(perfect.f1 == doctest::Approx(1.0));

    // An unscorable GT (no visible keypoints) still counts toward recall's
    // denominator but can never match.
    KeypointInstance blind = gt;
    blind.keypoints[0].visible = false;
    image.gts.push_back(blind);
    PrF1 half = keypoint_f1({image}, 0.5);
    CHECK(half.recall == doctest::Approx(0.5));
    CHECK(half.precision == doctest::Approx(1.0));

    CHECK_THROWS_AS(keypoint_f1({image}, 0.0), InvalidInputError);
    CHECK_THROWS_AS(keypoint_f1({ImageKeypoints{}}, 0.5), UndefinedRecallError);
}

TEST_CASE("keypoint suite mirrors the detection threshold grid") {
    ImageKeypoints image;
    KeypointInstance gt;
    gt.box = Box{0, 0, 10, 10};
    gt.keypoints = {{"nose", Point{5, 5}, true}};
    image.gts = {gt};
    KeypointInstance pred = gt;
    pred.keypoints[0].point = Point{6, 6}; // OKS exp(-1) ~ 0.368
    image.preds = {pred};

    KeypointEvalResult suite = keypoint_f1_suite({image});
    REQUIRE(suite.per_threshold.size() == 10);
    CHECK(suite.per_threshold.front().threshold == doctest::Approx(0.5));
    CHECK(suite.per_threshold.back().threshold == doctest::Approx(0.95));
    // OKS 0.368 never clears any threshold in the grid.
    CHECK(suite.f1_at_50 == 0.0);
    CHECK(suite.f1_at_95 == 0.0);

    // Move the prediction to an OKS of exp(-0.125) ~ 0.88: it clears 0.50
    // through 0.85 and drops out after.
    image.preds[0].keypoints[0].point = Point{5.5, 5.5};
    KeypointEvalResult mid = keypoint_f1_suite({image});
    CHECK(mid.f1_at_50 == doctest::Approx(1.0));
    CHECK(mid.f1_at_95 == 0.0);
    double mean = 0.0;
    for (std::size_t k = 0; k < 10; ++k) {
        mean += mid.per_threshold[k].f1;
        if (k > 0) CHECK(mid.per_threshold[k].f1 <= mid.per_threshold[k - 1].f1 + 1e-12);
    }
    CHECK(mid.f1_mean == doctest::Approx(mean / 10.0).epsilon(1e-12));
}
