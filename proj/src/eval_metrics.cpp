#include "tokdet/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "tokdet/errors.hpp"

namespace tokdet {

namespace {

const std::vector<double>& iou_thresholds() {
    static const std::vector<double> thresholds = [] {
        std::vector<double> t;
        for (int k = 0; k < 10; ++k) t.push_back(0.50 + 0.05 * k);
        return t;
    }();
    return thresholds;
}

double harmonic_f1(double recall, double precision) {
    const double denom = recall + precision;
    return denom > 0.0 ? 2.0 * recall * precision / denom : 0.0;
}

} // namespace

std::vector<MatchedPair> match_detections(const std::vector<LabeledBox>& preds,
                                          const std::vector<LabeledBox>& gts,
                                          double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
        throw InvalidInputError("IoU threshold must lie in (0, 1]");
    }
    std::vector<MatchedPair> candidates;
    for (std::size_t j = 0; j < gts.size(); ++j) {
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (preds[i].category != gts[j].category) continue;
            double overlap = iou(preds[i].box, gts[j].box);
            if (overlap >= iou_threshold) candidates.push_back(MatchedPair{j, i, overlap});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const MatchedPair& a, const MatchedPair& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.gt_index != b.gt_index) return a.gt_index < b.gt_index;
        return a.pred_index < b.pred_index;
    });
    std::vector<char> gt_used(gts.size(), 0), pred_used(preds.size(), 0);
    std::vector<MatchedPair> matches;
    for (const MatchedPair& c : candidates) {
        if (gt_used[c.gt_index] || pred_used[c.pred_index]) continue;
        gt_used[c.gt_index] = 1;
        pred_used[c.pred_index] = 1;
        matches.push_back(c);
    }
    return matches;
}

namespace {

struct CategoryCounts {
    std::int64_t n_gt = 0;
    std::int64_t n_pred = 0;
    std::int64_t matches = 0;
};

// Macro-average recall/precision over categories present in GT.
ThresholdEval aggregate(const std::map<std::string, CategoryCounts>& per_category,
                        double threshold) {
    double recall_sum = 0.0, precision_sum = 0.0;
    std::size_t n_categories = 0;
    for (const auto& [category, counts] : per_category) {
        if (counts.n_gt == 0) continue; // never in GT: excluded from the macro average
        ++n_categories;
        recall_sum += static_cast<double>(counts.matches) / static_cast<double>(counts.n_gt);
        precision_sum += counts.n_pred > 0 ? static_cast<double>(counts.matches) /
                                                 static_cast<double>(counts.n_pred)
                                           : 0.0;
    }
    ThresholdEval eval;
    eval.threshold = threshold;
    if (n_categories > 0) {
        eval.recall = recall_sum / static_cast<double>(n_categories);
        eval.precision = precision_sum / static_cast<double>(n_categories);
        eval.f1 = harmonic_f1(eval.recall, eval.precision);
    }
    return eval;
}

} // namespace

DetectionEvalResult detection_f1(const std::vector<ImageDetections>& images) {
    std::int64_t total_gt = 0;
    for (const ImageDetections& image : images) total_gt += static_cast<std::int64_t>(image.gts.size());
    if (total_gt == 0) {
        throw UndefinedRecallError("detection evaluation needs at least one ground-truth instance");
    }

    DetectionEvalResult result;
    for (double threshold : iou_thresholds()) {
        std::map<std::string, CategoryCounts> per_category;
        for (const ImageDetections& image : images) {
            for (const LabeledBox& gt : image.gts) per_category[gt.category].n_gt++;
            for (const LabeledBox& pred : image.preds) per_category[pred.category].n_pred++;
            for (const MatchedPair& m : match_detections(image.preds, image.gts, threshold)) {
                per_category[image.gts[m.gt_index].category].matches++;
            }
        }
        result.per_threshold.push_back(aggregate(per_category, threshold));
    }
    result.f1_at_50 = result.per_threshold.front().f1;
    result.f1_at_95 = result.per_threshold.back().f1;
    double sum = 0.0;
    for (const ThresholdEval& t : result.per_threshold) sum += t.f1;
    result.f1_miou = sum / static_cast<double>(result.per_threshold.size());
    return result;
}

DetectionEvalResult detection_f1(const std::vector<LabeledBox>& preds,
                                 const std::vector<LabeledBox>& gts) {
    return detection_f1(std::vector<ImageDetections>{ImageDetections{preds, gts}});
}

SweepResult score_threshold_sweep(const std::vector<ScoredImageDetections>& images) {
    for (const ScoredImageDetections& image : images) {
        if (image.confidences.size() != image.preds.size()) {
            throw InvalidInputError("confidence list must parallel the prediction list");
        }
        for (double c : image.confidences) {
            if (!(c >= 0.0 && c <= 1.0)) {
                throw InvalidInputError("confidences must lie in [0, 1]");
            }
        }
    }
    SweepResult result;
    bool have_best = false;
    for (int step = 0; step <= 100; ++step) {
        const double threshold = static_cast<double>(step) / 100.0;
        std::vector<ImageDetections> filtered;
        filtered.reserve(images.size());
        for (const ScoredImageDetections& image : images) {
            ImageDetections keep;
            keep.gts = image.gts;
            for (std::size_t i = 0; i < image.preds.size(); ++i) {
                if (image.confidences[i] >= threshold) keep.preds.push_back(image.preds[i]);
            }
            filtered.push_back(std::move(keep));
        }
        SweepPoint point;
        point.threshold = threshold;
        point.eval = detection_f1(filtered);
        if (!have_best || point.eval.f1_at_50 > result.best_f1) {
            have_best = true;
            result.best_f1 = point.eval.f1_at_50;
            result.best_threshold = threshold;
        }
        result.curve.push_back(std::move(point));
    }
    return result;
}

PrF1 point_f1(const std::vector<ImagePointEval>& images) {
    std::int64_t total_gt = 0;
    for (const ImagePointEval& image : images) total_gt += static_cast<std::int64_t>(image.gts.size());
    if (total_gt == 0) {
        throw UndefinedRecallError("point evaluation needs at least one ground-truth mask");
    }
    std::map<std::string, CategoryCounts> per_category;
    for (const ImagePointEval& image : images) {
        for (const LabeledMask& gt : image.gts) {
            if (gt.mask == nullptr) throw InvalidInputError("null ground-truth mask");
            per_category[gt.category].n_gt++;
        }
        for (const LabeledPoint& pred : image.preds) per_category[pred.category].n_pred++;
        // Greedy containment matching in (gt, pred) index order.
        std::vector<char> pred_used(image.preds.size(), 0);
        for (std::size_t j = 0; j < image.gts.size(); ++j) {
            for (std::size_t i = 0; i < image.preds.size(); ++i) {
                if (pred_used[i]) continue;
                if (image.preds[i].category != image.gts[j].category) continue;
                if (!image.gts[j].mask->contains(image.preds[i].point)) continue;
                pred_used[i] = 1;
                per_category[image.gts[j].category].matches++;
                break;
            }
        }
    }
    ThresholdEval agg = aggregate(per_category, 0.0);
    return PrF1{agg.recall, agg.precision, agg.f1};
}

double count_mae(const std::map<std::string, std::int64_t>& pred_counts,
                 const std::map<std::string, std::int64_t>& gt_counts) {
    if (pred_counts.size() != gt_counts.size()) {
        throw InvalidInputError("count maps must cover the same images");
    }
    if (gt_counts.empty()) {
        throw InvalidInputError("count evaluation needs at least one image");
    }
    double total = 0.0;
    for (const auto& [key, gt] : gt_counts) {
        auto it = pred_counts.find(key);
        if (it == pred_counts.end()) {
            throw InvalidInputError("count maps must cover the same images; missing \"" + key +
                                    "\"");
        }
        total += std::abs(static_cast<double>(it->second - gt));
    }
    return total / static_cast<double>(gt_counts.size());
}

double gui_accuracy(const std::vector<Point>& pred_points, const std::vector<Box>& targets) {
    if (pred_points.size() != targets.size()) {
        throw InvalidInputError("query lists must be aligned");
    }
    if (targets.empty()) {
        throw InvalidInputError("accuracy over zero queries is undefined");
    }
    std::int64_t hits = 0;
    for (std::size_t q = 0; q < targets.size(); ++q) {
        if (point_in_box(pred_points[q], targets[q])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(targets.size());
}

double oks(const KeypointInstance& pred, const KeypointInstance& gt,
           const OksConstants& constants) {
    const double s2 = area(gt.box);
    if (s2 <= 0.0) {
        throw UndefinedOksError("OKS scale undefined: ground-truth box has zero area");
    }
    std::size_t visible = 0;
    double total = 0.0;
    for (const Keypoint& kp : gt.keypoints) {
        if (!kp.visible) continue;
        ++visible;
        const Keypoint* match = nullptr;
        for (const Keypoint& pk : pred.keypoints) {
            if (pk.name == kp.name) {
                match = &pk;
                break;
            }
        }
        if (match == nullptr) continue; // missing keypoint contributes 0
        const double dx = match->point.x - kp.point.x;
        const double dy = match->point.y - kp.point.y;
        const double k = constants.k_for(kp.name);
        if (!(k > 0.0)) throw InvalidInputError("OKS falloff constant must be positive");
        // s^2 = GT box area, so d^2/(2 s^2 k^2) needs no square root.
        total += std::exp(-(dx * dx + dy * dy) / (2.0 * s2 * k * k));
    }
    if (visible == 0) {
        throw UndefinedOksError("OKS undefined: ground truth has no visible keypoint");
    }
    return total / static_cast<double>(visible);
}

namespace {

struct OksPair {
    std::size_t gt_index;
    std::size_t pred_index;
    double score;
};

} // namespace

PrF1 keypoint_f1(const std::vector<ImageKeypoints>& images, double oks_threshold,
                 const OksConstants& constants) {
    if (!(oks_threshold > 0.0 && oks_threshold <= 1.0)) {
        throw InvalidInputError("OKS threshold must lie in (0, 1]");
    }
    std::int64_t n_gt = 0, n_pred = 0, matches = 0;
    for (const ImageKeypoints& image : images) {
        n_gt += static_cast<std::int64_t>(image.gts.size());
        n_pred += static_cast<std::int64_t>(image.preds.size());
        std::vector<OksPair> candidates;
        for (std::size_t j = 0; j < image.gts.size(); ++j) {
            bool scorable = area(image.gts[j].box) > 0.0 &&
                            std::any_of(image.gts[j].keypoints.begin(),
                                        image.gts[j].keypoints.end(),
                                        [](const Keypoint& kp) { return kp.visible; });
            if (!scorable) continue;
            for (std::size_t i = 0; i < image.preds.size(); ++i) {
                double score = oks(image.preds[i], image.gts[j], constants);
                if (score >= oks_threshold) candidates.push_back(OksPair{j, i, score});
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const OksPair& a, const OksPair& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.gt_index != b.gt_index) return a.gt_index < b.gt_index;
            return a.pred_index < b.pred_index;
        });
        std::vector<char> gt_used(image.gts.size(), 0), pred_used(image.preds.size(), 0);
        for (const OksPair& c : candidates) {
            if (gt_used[c.gt_index] || pred_used[c.pred_index]) continue;
            gt_used[c.gt_index] = 1;
            pred_used[c.pred_index] = 1;
            ++matches;
        }
    }
    if (n_gt == 0) {
        throw UndefinedRecallError("keypoint evaluation needs at least one ground-truth instance");
    }
    PrF1 out;
    out.recall = static_cast<double>(matches) / static_cast<double>(n_gt);
    out.precision = n_pred > 0 ? static_cast<double>(matches) / static_cast<double>(n_pred) : 0.0;
    out.f1 = harmonic_f1(out.recall, out.precision);
    return out;
}

KeypointEvalResult keypoint_f1_suite(const std::vector<ImageKeypoints>& images,
                                     const OksConstants& constants) {
    KeypointEvalResult result;
    double sum = 0.0;
    for (double threshold : iou_thresholds()) {
        PrF1 pr = keypoint_f1(images, threshold, constants);
        result.per_threshold.push_back(ThresholdEval{threshold, pr.recall, pr.precision, pr.f1});
        sum += pr.f1;
    }
    result.f1_at_50 = result.per_threshold.front().f1;
    result.f1_at_95 = result.per_threshold.back().f1;
    result.f1_mean = sum / static_cast<double>(result.per_threshold.size());
    return result;
}

} // namespace tokdet
