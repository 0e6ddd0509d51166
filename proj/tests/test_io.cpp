#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "tokdet/errors.hpp"
#include "tokdet/io.hpp"

#include "testutil.hpp"

using namespace tokdet;
using nlohmann::json;

namespace {

// A small but complete ground-truth file: integer and string image ids, a
// keypoint schema, clamping, a polygon, and an explicit count.
const char* kGtText = R"({
  "images": [
    {"id": 1, "width": 100, "height": 80},
    {"id": "img2", "width": 50, "height": 50},
    {"id": 3, "width": 10, "height": 10}
  ],
  "categories": [
    {"id": 1, "name": "person", "keypoints": ["nose", "tail"]},
    {"id": 2, "name": "car"}
  ],
  "annotations": [
    {"image_id": 1, "category_id": 1, "bbox": [10, 10, 20, 30],
     "keypoints": [15, 20, 2, 0, 0, 0], "count": 3},
    {"image_id": 1, "category_id": 2, "bbox": [-5, -5, 40, 200]},
    {"image_id": "img2", "category_id": 2, "bbox": [5, 5, 40, 40],
     "segmentation": [[5, 5, 45, 5, 45, 45]]}
  ],
  "oks_k": {"nose": 0.026, "tail": 0.1}
})";

GroundTruthSet load_fixture() { return GroundTruthSet::load_json_text(kGtText); }

// Rejection helper: the fixture with one replacement applied must fail.
void expect_load_error(const std::string& from, const std::string& to) {
    std::string text = kGtText;
    auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, from.size(), to);
    CHECK_THROWS_AS(GroundTruthSet::load_json_text(text), LoadError);
}

} // namespace

TEST_CASE("ground truth loads images, categories, annotations") {
    GroundTruthSet gt = load_fixture();

    CHECK(gt.images().size() == 3);
    CHECK(gt.has_image("1")); // integer ids normalize to strings
    CHECK(gt.has_image("img2"));
    CHECK_FALSE(gt.has_image("nope"));
    CHECK(gt.image("1").width == 100.0);
    CHECK(gt.image("img2").height == 50.0);
    CHECK_THROWS_AS(gt.image("nope"), LoadError);

    CHECK(gt.categories().size() == 2);
    CHECK(gt.category_name(1) == "person");
    CHECK(gt.category_name(2) == "car");
    CHECK_THROWS_AS(gt.category_name(9), LoadError);
    CHECK(gt.categories().at(1).keypoint_names == std::vector<std::string>{"nose", "tail"});
    CHECK(gt.categories().at(2).keypoint_names.empty());

    REQUIRE(gt.annotations().size() == 3);
    CHECK(gt.annotations_for("1").size() == 2);
    CHECK(gt.annotations_for("3").empty());
    CHECK_THROWS_AS(gt.annotations_for("nope"), LoadError);

    // bbox is x, y, w, h and clamps to the image extent.
    std::vector<LabeledBox> boxes = gt.labeled_boxes("1");
    REQUIRE(boxes.size() == 2);
    CHECK(boxes[0].category == "person");
    CHECK(boxes[0].box.x0 == 10.0);
    CHECK(boxes[0].box.y1 == 40.0);
    CHECK(boxes[1].category == "car");
    CHECK(boxes[1].box.x0 == 0.0);
    CHECK(boxes[1].box.y0 == 0.0);
    CHECK(boxes[1].box.x1 == 35.0);
    CHECK(boxes[1].box.y1 == 80.0);

    // Explicit counts override the default of one per annotation.
    auto counts = gt.counts_per_image();
    CHECK(counts.at("1") == 4);
    CHECK(counts.at("img2") == 1);
    CHECK(counts.at("3") == 0);

    CHECK(gt.oks_constants().k_for("nose") == 0.026);
    CHECK(gt.oks_constants().k_for("unknown") == 0.1); // fallback

    // Keypoint instances only exist where annotations carry keypoints.
    auto insts = gt.keypoint_instances("1");
    REQUIRE(insts.size() == 1);
    REQUIRE(insts[0].keypoints.size() == 2);
    CHECK(insts[0].keypoints[0].name == "nose");
    CHECK(insts[0].keypoints[0].visible);
    CHECK_FALSE(insts[0].keypoints[1].visible); // v = 0
}

TEST_CASE("ground truth masks: box fallback and polygon rasterization") {
    GroundTruthSet gt = load_fixture();

    // No segmentation: the box rectangle becomes the mask.
    const Mask& box_mask = gt.mask(0);
    CHECK(box_mask.width() == 100);
    CHECK(box_mask.height() == 80);
    CHECK(box_mask.at(15, 20));
    CHECK_FALSE(box_mask.at(5, 5));
    CHECK(box_mask.count() == 20 * 30);

    // Segmentation present: the polygon wins over the box.
    const Mask& tri_mask = gt.mask(2);
    CHECK(tri_mask.width() == 50);
    CHECK(tri_mask.at(40, 10)); // well inside the right-angled triangle
    CHECK_FALSE(tri_mask.at(10, 40));

    // Same object twice returns the cached mask.
    CHECK(&gt.mask(2) == &tri_mask);

    CHECK_THROWS_AS(gt.mask(99), InvalidInputError);
}

TEST_CASE("ground truth rejects malformed input") {
    CHECK_THROWS_AS(GroundTruthSet::load_json_text("not json"), LoadError);
    CHECK_THROWS_AS(GroundTruthSet::load_json_text("[1, 2]"), LoadError);
    CHECK_THROWS_AS(GroundTruthSet::load_json_text("{}"), LoadError);
    CHECK_THROWS_AS(GroundTruthSet::load_file("/nonexistent/path.json"), LoadError);

    // Field-level rejections, each a one-edit corruption of the fixture.
    expect_load_error(R"("id": 1, "width": 100)", R"("id": 1.5, "width": 100)");
    expect_load_error(R"("width": 100)", R"("width": 0)");
    expect_load_error(R"("id": "img2", "width": 50)", R"("id": 1, "width": 50)");
    expect_load_error(R"({"id": 2, "name": "car"})", R"({"id": 1, "name": "car"})");
    expect_load_error(R"({"id": 2, "name": "car"})", R"({"id": 2, "name": "person"})");
    expect_load_error(R"("image_id": "img2", "category_id": 2)",
                      R"("image_id": "ghost", "category_id": 2)");
    expect_load_error(R"("category_id": 1, "bbox": [10, 10, 20, 30])",
                      R"("category_id": 7, "bbox": [10, 10, 20, 30])");
    expect_load_error(R"("bbox": [10, 10, 20, 30])", R"("bbox": [10, 10, 20])");
    expect_load_error(R"("bbox": [10, 10, 20, 30])", R"("bbox": [10, 10, -1, 30])");
    expect_load_error(R"("segmentation": [[5, 5, 45, 5, 45, 45]])",
                      R"("segmentation": [[5, 5, 45, 5, 45]])");
    expect_load_error(R"("count": 3)", R"("count": -1)");
    expect_load_error(R"("keypoints": [15, 20, 2, 0, 0, 0])", R"("keypoints": [15, 20, 2])");
    expect_load_error(R"("oks_k": {"nose": 0.026, "tail": 0.1})",
                      R"("oks_k": {"nose": 0.0, "tail": 0.1})");
    // Keypoints on a category without a schema.
    expect_load_error(R"("image_id": "img2", "category_id": 2, "bbox": [5, 5, 40, 40])",
                      R"("image_id": "img2", "category_id": 2, "bbox": [5, 5, 40, 40],
                         "keypoints": [1, 1, 2])");
}

TEST_CASE("raw tab-separated prediction lines") {
    GroundTruthSet gt = load_fixture();
    std::string text =
        "1\t<|object_ref_start|>person<|object_ref_end|><|box_start|><100><100><300><400>"
        "<|box_end|>\r\n"
        "no tab on this line\n"
        "999\t<|object_ref_start|>car<|object_ref_end|><|box_start|>None<|box_end|>\n"
        "\n"
        "1\t<|object_ref_start|>car<|object_ref_end|><|box_start|><1><2><3><4><|box_end|>\n";

    PredictionSet preds = parse_predictions_text(text, gt, PayloadKind::Box);
    REQUIRE(preds.images.size() == 1); // both valid lines target image "1"
    CHECK(preds.images[0].image_id == "1");
    REQUIRE(preds.images[0].records.size() == 2); // merged
    CHECK(preds.images[0].records[0].phrase == "person");
    CHECK(preds.images[0].records[1].phrase == "car");
    CHECK_FALSE(preds.has_confidence);

    // One warning per bad line plus the merge notice.
    REQUIRE(preds.warnings.size() == 3);
    CHECK(preds.warnings[0].find("missing TAB") != std::string::npos);
    CHECK(preds.warnings[1].find("unknown image id") != std::string::npos);
    CHECK(preds.warnings[2].find("merged") != std::string::npos);

    // Token spans of the merged second record sit past the first sequence.
    const QuantGeometry& g = preds.images[0].records[1].geometries[0];
    CHECK(g.span_begin > 0);
    CHECK(g.span_end > g.span_begin);
}

TEST_CASE("structured JSON prediction entries") {
    GroundTruthSet gt = load_fixture();
    std::string text = R"([
      {"image_id": 1,
       "sequence": "<|object_ref_start|>car<|object_ref_end|><|box_start|><1><2><3><4><|box_end|>"},
      {"image_id": "img2", "records": [
        {"phrase": "car", "groups": [[10, 20, 30, 40]], "confidences": [0.9]},
        {"phrase": "person", "absent": true},
        {"phrase": "bad", "groups": [[1000, 0, 0, 0]]},
        {"phrase": "short", "groups": [[1, 2]]}
      ]}
    ])";

    PredictionSet preds = parse_predictions_text(text, gt, PayloadKind::Box);
    REQUIRE(preds.images.size() == 2);
    CHECK(preds.images[0].records.size() == 1);
    REQUIRE(preds.images[1].records.size() == 2); // car + absent person survive
    CHECK(preds.images[1].records[0].phrase == "car");
    CHECK(preds.images[1].records[1].absent);
    CHECK(preds.images[1].confidences == std::vector<double>{0.9});

    // The sequence-entry box has no confidence, so the set does not qualify.
    CHECK_FALSE(preds.has_confidence);

    bool saw_range = false, saw_arity = false;
    for (const std::string& w : preds.warnings) {
        if (w.find("outside 0..999") != std::string::npos) saw_range = true;
        if (w.find("wrong number of values") != std::string::npos) saw_arity = true;
    }
    CHECK(saw_range);
    CHECK(saw_arity);

    // All boxes carrying confidences flips the flag on.
    std::string all_conf = R"([
      {"image_id": 1, "records": [
        {"phrase": "car", "groups": [[1, 2, 3, 4], [5, 6, 7, 8]], "confidences": [0.5, 2.0]}
      ]}
    ])";
    PredictionSet conf = parse_predictions_text(all_conf, gt, PayloadKind::Box);
    CHECK(conf.has_confidence);
    REQUIRE(conf.images[0].confidences.size() == 2);
    CHECK(conf.images[0].confidences[1] == 1.0); // clamped, with a warning
    bool saw_clamp = false;
    for (const std::string& w : conf.warnings) {
        if (w.find("clamped") != std::string::npos) saw_clamp = true;
    }
    CHECK(saw_clamp);

    // A JSON-looking file that fails to parse degrades to a warning.
    PredictionSet broken = parse_predictions_text("[{", gt, PayloadKind::Box);
    CHECK(broken.images.empty());
    CHECK(broken.warnings.size() == 1);
}

TEST_CASE("record dequantization helpers") {
    PredictionRecord rec;
    rec.phrase = "car";
    rec.kind = PayloadKind::Box;
    rec.geometries.push_back(QuantGeometry{{Bin(0), Bin(100), Bin(500), Bin(999)}, 0, 0});

    PredictionRecord absent;
    absent.phrase = "person";
    absent.kind = PayloadKind::Box;
    absent.absent = true;

    PredictionRecord point;
    point.phrase = "dot";
    point.kind = PayloadKind::Point;
    point.geometries.push_back(QuantGeometry{{Bin(500), Bin(500)}, 0, 0});

    std::vector<LabeledBox> boxes = to_labeled_boxes({rec, absent, point}, 100.0, 200.0);
    REQUIRE(boxes.size() == 1); // absent and wrong-arity records skipped
    CHECK(boxes[0].category == "car");
    CHECK(boxes[0].box.x0 == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(boxes[0].box.y0 == doctest::Approx(20.1).epsilon(1e-12));
    CHECK(boxes[0].box.x1 == doctest::Approx(50.05).epsilon(1e-12));
    CHECK(boxes[0].box.y1 == doctest::Approx(199.9).epsilon(1e-12));

    std::vector<LabeledPoint> points = to_labeled_points({rec, point}, 100.0, 100.0);
    REQUIRE(points.size() == 1);
    CHECK(points[0].category == "dot");
    CHECK(points[0].point.x == doctest::Approx(50.05).epsilon(1e-12));

    PredictionRecord kpt;
    kpt.phrase = "cat0";
    kpt.kind = PayloadKind::KeypointJson;
    kpt.geometries.push_back(QuantGeometry{{Bin(0), Bin(0), Bin(999), Bin(999)}, 0, 0});
    kpt.keypoints.push_back(NamedKeypoint{"nose", Bin(500), Bin(250)});
    std::vector<KeypointInstance> insts = to_keypoint_instances({kpt, absent}, 1000.0, 1000.0);
    REQUIRE(insts.size() == 1);
    REQUIRE(insts[0].keypoints.size() == 1);
    CHECK(insts[0].keypoints[0].name == "nose");
    CHECK(insts[0].keypoints[0].point.x == doctest::Approx(500.5).epsilon(1e-12));
    CHECK(insts[0].keypoints[0].point.y == doctest::Approx(250.5).epsilon(1e-12));
    CHECK(insts[0].keypoints[0].visible);
}

TEST_CASE("result JSON schemas are stable") {
    DetectionEvalResult det;
    ThresholdEval row;
    row.threshold = 0.5;
    row.recall = 1.0;
    row.precision = 0.5;
    row.f1 = 2.0 / 3.0;
    det.per_threshold.push_back(row);
    det.f1_at_50 = 2.0 / 3.0;
    det.f1_at_95 = 0.0;
    det.f1_miou = 1.0 / 3.0;
    json det_expected = {
        {"per_threshold", json::array({{{"iou_threshold", 0.5},
                                        {"recall", 1.0},
                                        {"precision", 0.5},
                                        {"f1", 2.0 / 3.0}}})},
        {"f1_at_50", 2.0 / 3.0},
        {"f1_at_95", 0.0},
        {"f1_miou", 1.0 / 3.0}};
    CHECK(to_json(det) == det_expected);

    PrF1 pr;
    pr.recall = 0.25;
    pr.precision = 1.0;
    pr.f1 = 0.4;
    CHECK(to_json(pr) == json{{"recall", 0.25}, {"precision", 1.0}, {"f1", 0.4}});

    RewardReport reward;
    reward.recall = 0.5;
    reward.precision = 1.0;
    reward.reward = 1.5;
    GtMatch hit;
    hit.pred_index = 2;
    hit.credit = 0.5;
    reward.per_gt.push_back(hit);
    reward.per_gt.push_back(GtMatch{});
    json reward_expected = {
        {"recall", 0.5},
        {"precision", 1.0},
        {"reward", 1.5},
        {"per_gt", json::array({{{"credit", 0.5}, {"pred_index", 2}},
                                {{"credit", 0.0}, {"pred_index", nullptr}}})}};
    CHECK(to_json(reward) == reward_expected);

    ParseDiagnostic diag;
    diag.position = 7;
    diag.severity = Severity::Fatal;
    diag.message = "boom";
    CHECK(to_json(diag) ==
          json{{"position", 7}, {"severity", "fatal"}, {"message", "boom"}});
    diag.severity = Severity::Recoverable;
    CHECK(to_json(diag)["severity"] == "recoverable");

    PredictionRecord rec;
    rec.phrase = "cat";
    rec.kind = PayloadKind::Box;
    rec.geometries.push_back(QuantGeometry{{Bin(1), Bin(2), Bin(3), Bin(4)}, 0, 0});
    json rec_expected = {{"phrase", "cat"},
                         {"kind", "box"},
                         {"absent", false},
                         {"groups", json::array({json::array({1, 2, 3, 4})})}};
    CHECK(to_json(rec) == rec_expected);

    rec.kind = PayloadKind::KeypointJson;
    rec.keypoints.push_back(NamedKeypoint{"nose", Bin(10), Bin(20)});
    json kj = to_json(rec);
    CHECK(kj["kind"] == "keypoint_json");
    CHECK(kj["keypoints"] == json{{"nose", json::array({10, 20})}});

    TokenEfficiency eff;
    eff.tokens_per_box = 4.0;
    eff.total_tokens = 6;
    eff.coord_tokens = 4;
    eff.separator_tokens = 2;
    eff.box_count = 1;
    CHECK(to_json(eff) == json{{"tokens_per_box", 4.0},
                               {"total_tokens", 6},
                               {"coord_tokens", 4},
                               {"separator_tokens", 2},
                               {"box_count", 1}});

    SweepResult sweep;
    sweep.best_threshold = 0.3;
    sweep.best_f1 = 0.8;
    SweepPoint pt;
    pt.threshold = 0.3;
    pt.eval.f1_at_50 = 0.8;
    pt.eval.f1_miou = 0.4;
    sweep.curve.push_back(pt);
    json sweep_json = to_json(sweep);
    CHECK(sweep_json["best_threshold"] == 0.3);
    CHECK(sweep_json["curve"][0] == json{{"confidence_threshold", 0.3},
                                         {"f1_at_50", 0.8},
                                         {"f1_miou", 0.4}});
}

TEST_CASE("plain-text tables") {
    DetectionEvalResult det;
    ThresholdEval row;
    row.threshold = 0.5;
    row.recall = 1.0;
    row.precision = 0.5;
    row.f1 = 2.0 / 3.0;
    det.per_threshold.push_back(row);
    det.f1_at_50 = 2.0 / 3.0;
    det.f1_miou = 2.0 / 3.0;
    std::string table = detection_table(det);
    CHECK(table.find("0.500   1.000   0.500   0.667") != std::string::npos);
    CHECK(table.find("F1@0.5 0.667") != std::string::npos);

    AblationReport rep;
    rep.before.f1_at_50 = 0.25;
    rep.after.f1_at_50 = 0.75;
    rep.removal_ratio = 0.5;
    std::string ab = ablation_table(rep);
    CHECK(ab.find("before    0.250") != std::string::npos);
    CHECK(ab.find("50.000%") != std::string::npos);
}

TEST_CASE("prediction ingestion survives byte fuzz") {
    GroundTruthSet gt = load_fixture();
    testutil::Rng rng(0xF00D10ULL);
    const std::string alphabet =
        "<>|_abcdXYZ0123456789 \t\r\n,[]{}:\"Nonebox_startobject_ref";
    for (int trial = 0; trial < 500; ++trial) {
        std::string text;
        int len = rng.next_int(0, 300);
        for (int i = 0; i < len; ++i) {
            if (rng.next_int(0, 20) == 0) {
                text += "1\t"; // occasionally hit a real image id
            } else {
                text += alphabet[static_cast<std::size_t>(
                    rng.next_int(0, static_cast<int>(alphabet.size()) - 1))];
            }
        }
        PredictionSet preds = parse_predictions_text(text, gt, PayloadKind::Box);
        for (const ImagePredictions& img : preds.images) {
            CHECK(gt.has_image(img.image_id));
        }
    }
}
