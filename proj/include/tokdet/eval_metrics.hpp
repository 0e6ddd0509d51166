#pragma once

// Detection-style evaluation protocol: per-category recall/precision at IoU
// thresholds 0.50..0.95, macro-averaged over categories present in the
// ground truth, with F1 as the harmonic mean of the averaged recall and
// precision. Plus confidence-threshold sweeps, point-in-mask F1, counting
// MAE, GUI point accuracy, and OKS-based keypoint F1.
//
// Matching here is the evaluation protocol's greedy rule (IoU descending,
// one-to-one, per category, deterministic tie-break), which is distinct from
// the reward module's exact assignment.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tokdet/labeled.hpp"

namespace tokdet {

struct MatchedPair {
    std::size_t gt_index;
    std::size_t pred_index;
    double iou;
};

// Greedy one-to-one matching within each category: candidate (gt, pred)
// pairs with equal labels and IoU >= iou_threshold are visited in descending
// IoU order (ties by gt index, then pred index) and accepted while both
// sides are unconsumed.
std::vector<MatchedPair> match_detections(const std::vector<LabeledBox>& preds,
                                          const std::vector<LabeledBox>& gts,
                                          double iou_threshold);

struct ThresholdEval {
    double threshold = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
};

struct DetectionEvalResult {
    std::vector<ThresholdEval> per_threshold; // 0.50, 0.55, ..., 0.95
    double f1_at_50 = 0.0;
    double f1_at_95 = 0.0;
    double f1_miou = 0.0; // mean of the 10 per-threshold F1 values
};

struct ImageDetections {
    std::vector<LabeledBox> preds;
    std::vector<LabeledBox> gts;
};

// Dataset-level detection evaluation. Per category (over categories present
// in the GT of the set), recall = matches / n_gt and precision =
// matches / n_pred (0 when that category has no predictions); categories
// never appearing in GT are excluded, but predictions of GT-present
// categories count toward that category's precision everywhere. Throws
// UndefinedRecallError when the set has no GT instance at all.
DetectionEvalResult detection_f1(const std::vector<ImageDetections>& images);

// Single-image convenience overload.
DetectionEvalResult detection_f1(const std::vector<LabeledBox>& preds,
                                 const std::vector<LabeledBox>& gts);

struct ScoredImageDetections {
    std::vector<LabeledBox> preds;
    std::vector<double> confidences; // parallel to preds, each in [0,1]
    std::vector<LabeledBox> gts;
};

struct SweepPoint {
    double threshold = 0.0;
    DetectionEvalResult eval;
};

struct SweepResult {
    double best_threshold = 0.0;
    double best_f1 = 0.0; // F1 at IoU 0.5 of the winning confidence threshold
    std::vector<SweepPoint> curve; // all 101 thresholds 0.00..1.00
};

// Evaluate detection_f1 after filtering predictions at each confidence
// threshold 0.00, 0.01, ..., 1.00 (keep when confidence >= threshold);
// ranked by F1 at IoU 0.5, lowest threshold on ties.
SweepResult score_threshold_sweep(const std::vector<ScoredImageDetections>& images);

struct PrF1 {
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
};

struct ImagePointEval {
    std::vector<LabeledPoint> preds;
    std::vector<LabeledMask> gts;
};

// Point prediction against instance masks: greedy one-to-one containment
// matching within category (candidates in (gt index, pred index) order),
// then the same per-category macro aggregation as detection_f1. Throws
// UndefinedRecallError when the set has no mask.
PrF1 point_f1(const std::vector<ImagePointEval>& images);

// Mean absolute difference of per-image counts. The two maps must have the
// same key set.
double count_mae(const std::map<std::string, std::int64_t>& pred_counts,
                 const std::map<std::string, std::int64_t>& gt_counts);

// Fraction of aligned queries whose predicted point lies in the target box.
// Lists must be the same non-zero length.
double gui_accuracy(const std::vector<Point>& pred_points, const std::vector<Box>& targets);

struct Keypoint {
    std::string name;
    Point point;
    bool visible = true;
};

struct KeypointInstance {
    Box box;
    std::vector<Keypoint> keypoints;
};

// Per-name OKS falloff constants; names missing from the table use
// fallback_k.
struct OksConstants {
    std::map<std::string, double> per_name;
    double fallback_k = 0.1;

    double k_for(const std::string& name) const {
        auto it = per_name.find(name);
        return it == per_name.end() ? fallback_k : it->second;
    }
};

// Object keypoint similarity: mean over the GT's visible keypoints of
// exp(-d^2 / (2 s^2 k^2)) with s = sqrt(GT box area); a name the prediction
// lacks contributes 0. Throws UndefinedOksError when the GT has no visible
// keypoint or a zero-area box.
double oks(const KeypointInstance& pred, const KeypointInstance& gt,
           const OksConstants& constants = {});

struct ImageKeypoints {
    std::vector<KeypointInstance> preds;
    std::vector<KeypointInstance> gts;
};

// Greedy one-to-one instance matching by OKS descending (ties by gt index,
// then pred index), accepted at OKS >= threshold; counts accumulated across
// images. Throws UndefinedRecallError when the set has no GT instance.
PrF1 keypoint_f1(const std::vector<ImageKeypoints>& images, double oks_threshold,
                 const OksConstants& constants = {});

struct KeypointEvalResult {
    std::vector<ThresholdEval> per_threshold; // OKS 0.50, 0.55, ..., 0.95
    double f1_at_50 = 0.0;
    double f1_at_95 = 0.0;
    double f1_mean = 0.0;
};

KeypointEvalResult keypoint_f1_suite(const std::vector<ImageKeypoints>& images,
                                     const OksConstants& constants = {});

} // namespace tokdet
