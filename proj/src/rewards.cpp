#include "tokdet/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tokdet/errors.hpp"

namespace tokdet {

namespace {

double f1_reward(double precision, double recall) {
    return 2.0 * precision * recall / (precision + recall + kF1Epsilon);
}

// Shared core once a GT x pred credit matrix exists.
RewardReport report_from_credits(const std::vector<std::vector<double>>& credit,
                                 std::size_t pred_count, MatchMode mode) {
    const std::size_t n = credit.size();
    RewardReport report;
    report.per_gt.assign(n, GtMatch{});

    if (mode == MatchMode::Literal) {
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < credit[j].size(); ++i) {
                if (credit[j][i] > report.per_gt[j].credit) {
                    report.per_gt[j].credit = credit[j][i];
                    report.per_gt[j].pred_index = i;
                }
            }
        }
    } else {
        auto assignment = max_weight_assignment(credit);
        for (std::size_t j = 0; j < n; ++j) {
            if (!assignment[j]) continue;
            double c = credit[j][*assignment[j]];
            if (c > 0.0) {
                report.per_gt[j].credit = c;
                report.per_gt[j].pred_index = *assignment[j];
            }
        }
    }

    double total = 0.0;
    for (const GtMatch& gm : report.per_gt) total += gm.credit;
    report.recall = total / static_cast<double>(n);
    report.precision = pred_count > 0 ? total / static_cast<double>(pred_count) : 0.0;
    report.reward = f1_reward(report.precision, report.recall);
    return report;
}

} // namespace

std::vector<std::optional<std::size_t>>
max_weight_assignment(const std::vector<std::vector<double>>& weights) {
    const std::size_t n = weights.size();
    if (n == 0) return {};
    const std::size_t m_real = weights[0].size();
    for (const auto& row : weights) {
        if (row.size() != m_real) {
            throw InvalidInputError("assignment weight matrix is ragged");
        }
        for (double w : row) {
            if (!std::isfinite(w)) throw InvalidInputError("non-finite assignment weight");
        }
    }
    // n zero-weight dummy columns let every row opt out, so rows never fight
    // over scarce columns at negative total weight and n <= m always holds.
    const std::size_t m = m_real + n;
    constexpr double kInf = std::numeric_limits<double>::infinity();

    // Augmenting-path Hungarian over cost = -weight, 1-indexed potentials.
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    auto cost_at = [&](std::size_t row, std::size_t col) {
        return col < m_real ? -weights[row][col] : 0.0;
    };
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            std::size_t i0 = p[j0], j1 = 0;
            double delta = kInf;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                double cur = cost_at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::optional<std::size_t>> result(n);
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] > 0 && j - 1 < m_real) result[p[j] - 1] = j - 1;
    }
    return result;
}

RewardReport box_iou_reward(const std::vector<LabeledBox>& preds,
                            const std::vector<LabeledBox>& gts, MatchMode mode) {
    if (gts.empty()) {
        throw UndefinedRecallError("box reward needs at least one ground-truth box");
    }
    std::vector<std::vector<double>> credit(gts.size(), std::vector<double>(preds.size(), 0.0));
    for (std::size_t j = 0; j < gts.size(); ++j) {
        for (std::size_t i = 0; i < preds.size(); ++i) {
            double overlap = iou(preds[i].box, gts[j].box);
            credit[j][i] = preds[i].category == gts[j].category ? overlap : 0.0;
        }
    }
    if (mode == MatchMode::Literal) {
        // Literal matching is label-blind argmax with a label gate on the
        // credit, so recompute: pick max IoU, then zero mismatched labels.
        RewardReport report;
        report.per_gt.assign(gts.size(), GtMatch{});
        double total = 0.0;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            double best_iou = 0.0;
            std::optional<std::size_t> best;
            for (std::size_t i = 0; i < preds.size(); ++i) {
                double overlap = iou(preds[i].box, gts[j].box);
                if (overlap > best_iou) {
                    best_iou = overlap;
                    best = i;
                }
            }
            if (best) {
                report.per_gt[j].pred_index = best;
                if (preds[*best].category == gts[j].category) {
                    report.per_gt[j].credit = best_iou;
                    total += best_iou;
                }
            }
        }
        report.recall = total / static_cast<double>(gts.size());
        report.precision = preds.empty() ? 0.0 : total / static_cast<double>(preds.size());
        report.reward = f1_reward(report.precision, report.recall);
        return report;
    }
    return report_from_credits(credit, preds.size(), mode);
}

RewardReport point_in_mask_reward(const std::vector<LabeledPoint>& preds,
                                  const std::vector<LabeledMask>& gt_masks, MatchMode mode) {
    if (gt_masks.empty()) {
        throw UndefinedRecallError("point reward needs at least one ground-truth mask");
    }
    std::vector<std::vector<double>> credit(gt_masks.size(),
                                            std::vector<double>(preds.size(), 0.0));
    for (std::size_t j = 0; j < gt_masks.size(); ++j) {
        if (gt_masks[j].mask == nullptr) {
            throw InvalidInputError("ground-truth mask " + std::to_string(j) + " is null");
        }
        for (std::size_t i = 0; i < preds.size(); ++i) {
            bool hit = preds[i].category == gt_masks[j].category &&
                       gt_masks[j].mask->contains(preds[i].point);
            credit[j][i] = hit ? 1.0 : 0.0;
        }
    }
    return report_from_credits(credit, preds.size(), mode);
}

double point_in_box_reward(const Point& pred, const Box& target) {
    return point_in_box(pred, target) ? 1.0 : 0.0;
}

} // namespace tokdet
