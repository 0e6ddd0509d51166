#pragma once

// Geometry-aware reward functions for policy training: an F1-style box
// reward over IoU credits, a point-in-mask reward, and a single-target
// point-in-box reward. Each returns a scalar in [0,1] plus a per-GT match
// report.
//
// Matching modes:
//  - literal: each GT is matched independently to its maximum-IoU prediction
//    (label-blind argmax, label gate on the credit). One prediction may
//    serve several GTs, so precision can exceed 1.
//  - exclusive (default): exact maximum one-to-one assignment of label-gated
//    credits, guaranteeing precision <= 1. Note that appending a duplicate
//    prediction can still raise the credit sum when the copy serves a second
//    GT better than that GT's own best partner; only on instances where each
//    prediction overlaps at most one GT is the total credit fixed under
//    duplication.

#include <cstddef>
#include <optional>
#include <vector>

#include "tokdet/labeled.hpp"

namespace tokdet {

inline constexpr double kF1Epsilon = 1e-6;

enum class MatchMode { Literal, Exclusive };

struct GtMatch {
    std::optional<std::size_t> pred_index; // absent when nothing credits this GT
    double credit = 0.0;                   // r_j
};

struct RewardReport {
    double recall = 0.0;
    double precision = 0.0;
    double reward = 0.0;
    std::vector<GtMatch> per_gt;
};

// IoU-credit reward: r_j = IoU(matched pred, gt_j) gated by label equality;
// Recall = sum r_j / n, Precision = sum r_j / m (0 when m = 0),
// reward = 2PR / (P + R + 1e-6). Throws UndefinedRecallError when gts is
// empty.
RewardReport box_iou_reward(const std::vector<LabeledBox>& preds,
                            const std::vector<LabeledBox>& gts,
                            MatchMode mode = MatchMode::Exclusive);

// Binary containment reward: each mask earns credit 1 when a matching-label
// point lies inside it (exclusive mode: each point credits at most one
// mask). Throws UndefinedRecallError when gt_masks is empty.
RewardReport point_in_mask_reward(const std::vector<LabeledPoint>& preds,
                                  const std::vector<LabeledMask>& gt_masks,
                                  MatchMode mode = MatchMode::Exclusive);

// 1 iff the point lies in the closed target box.
double point_in_box_reward(const Point& pred, const Box& target);

// Exact maximum-total-weight one-to-one assignment of rows to columns
// (augmenting-path Hungarian, O(rows^2 * cols)). Returns, per row, the
// assigned column or nullopt. Weights must be finite; negative weights are
// allowed but an all-zero assignment is always available implicitly via
// zero-weight padding. Exposed for the evaluation-side oracle tests.
std::vector<std::optional<std::size_t>>
max_weight_assignment(const std::vector<std::vector<double>>& weights);

} // namespace tokdet
