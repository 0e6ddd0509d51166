#pragma once

// Ground-truth and prediction file ingestion plus JSON report emission.
//
// Ground truth is a single COCO-style JSON file:
//
//   {
//     "images":      [{"id": 1, "width": 1000, "height": 800}, ...],
//     "categories":  [{"id": 1, "name": "person",
//                      "keypoints": ["nose", ...]}, ...],   // keypoints optional
//     "annotations": [{"image_id": 1, "category_id": 1,
//                      "bbox": [x, y, w, h],
//                      "segmentation": [[x1, y1, x2, y2, ...]],  // optional
//                      "keypoints": [x, y, v, ...],              // optional
//                      "count": 3}, ...],                        // optional
//     "oks_k": {"nose": 0.026, ...}                              // optional
//   }
//
// Predictions come either as raw token-sequence lines
//
//   image_id<TAB>sequence text
//
// or as a JSON array of per-image entries carrying either a "sequence"
// string or pre-structured "records" with optional per-box confidences.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tokdet/diagnostics.hpp"
#include "tokdet/eval_metrics.hpp"
#include "tokdet/geometry.hpp"
#include "tokdet/rewards.hpp"
#include "tokdet/seq_format.hpp"

namespace tokdet {

struct GtImage {
    std::string id;
    double width = 0.0;
    double height = 0.0;
};

struct GtCategory {
    int id = 0;
    std::string name;
    std::vector<std::string> keypoint_names; // empty unless the category has a keypoint schema
};

struct GtAnnotation {
    std::string image_id;
    int category_id = 0;
    Box box;          // corner form, clamped to the image extent
    Polygon polygon;  // empty when the annotation has no segmentation
    std::vector<Keypoint> keypoints;
    std::optional<std::int64_t> count;
};

// Validated ground-truth container. Integer and string image ids are both
// accepted and normalized to strings. Masks are rasterized lazily on first
// use (from the polygon when present, else the box rectangle) and cached.
class GroundTruthSet {
public:
    static GroundTruthSet load_file(const std::string& path);
    static GroundTruthSet load_json_text(const std::string& text);

    const std::vector<GtImage>& images() const { return images_; }
    bool has_image(const std::string& id) const;
    const GtImage& image(const std::string& id) const; // throws LoadError when unknown

    const std::map<int, GtCategory>& categories() const { return categories_; }
    const std::string& category_name(int id) const;

    const std::vector<GtAnnotation>& annotations() const { return annotations_; }
    const std::vector<std::size_t>& annotations_for(const std::string& image_id) const;

    // Lazily rasterized instance mask for one annotation, at the pixel
    // resolution of its image. Thread-safe.
    const Mask& mask(std::size_t annotation_index) const;

    const OksConstants& oks_constants() const { return oks_; }

    // Evaluation-ready views of one image's annotations.
    std::vector<LabeledBox> labeled_boxes(const std::string& image_id) const;
    std::vector<LabeledMask> labeled_masks(const std::string& image_id) const;
    std::vector<KeypointInstance> keypoint_instances(const std::string& image_id) const;

    // Per-image ground-truth object counts: an annotation's explicit count
    // when present, else 1, summed per image. Every image appears, absent
    // ones with 0.
    std::map<std::string, std::int64_t> counts_per_image() const;

private:
    std::vector<GtImage> images_;
    std::map<std::string, std::size_t> image_index_;
    std::map<int, GtCategory> categories_;
    std::vector<GtAnnotation> annotations_;
    std::map<std::string, std::vector<std::size_t>> per_image_;
    OksConstants oks_;

    mutable std::unique_ptr<std::mutex> mask_mutex_ = std::make_unique<std::mutex>();
    mutable std::map<std::size_t, Mask> mask_cache_;
};

struct ImagePredictions {
    std::string image_id;
    TokenSeq seq; // raw token sequence; empty for pre-structured JSON entries
    std::vector<PredictionRecord> records;
    std::vector<ParseDiagnostic> diagnostics;
    std::vector<double> confidences; // one per box group, when the file provides them
};

struct PredictionSet {
    PayloadKind kind = PayloadKind::Box;
    std::vector<ImagePredictions> images;
    std::vector<std::string> warnings; // file-level issues, one line each
    bool has_confidence = false;       // true iff every box in the file carries one
};

PredictionSet load_predictions(const std::string& path, const GroundTruthSet& gt,
                               PayloadKind kind);
PredictionSet parse_predictions_text(const std::string& content, const GroundTruthSet& gt,
                                     PayloadKind kind);

// Dequantization of parsed records into continuous geometry at an image
// extent. Absent records and groups of the wrong arity are skipped.
std::vector<LabeledBox> to_labeled_boxes(const std::vector<PredictionRecord>& records,
                                         double width, double height);
std::vector<LabeledPoint> to_labeled_points(const std::vector<PredictionRecord>& records,
                                            double width, double height);
std::vector<KeypointInstance> to_keypoint_instances(
    const std::vector<PredictionRecord>& records, double width, double height);

// Schema-stable JSON forms of the result types (golden-file tested).
nlohmann::json to_json(const DetectionEvalResult& result);
nlohmann::json to_json(const PrF1& result);
nlohmann::json to_json(const KeypointEvalResult& result);
nlohmann::json to_json(const SweepResult& result);
nlohmann::json to_json(const RewardReport& report);
nlohmann::json to_json(const AblationReport& report);
nlohmann::json to_json(const TokenEfficiency& eff);
nlohmann::json to_json(const ParseDiagnostic& diag);
nlohmann::json to_json(const PredictionRecord& record);

// Plain-text table renderings for --table output.
std::string detection_table(const DetectionEvalResult& result);
std::string ablation_table(const AblationReport& report);

} // namespace tokdet
