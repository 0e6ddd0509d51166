#include "tokdet/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tokdet {

std::vector<double> advantages(const std::vector<double>& rewards, double std_floor) {
    const std::size_t g = rewards.size();
    if (g < 2) {
        throw GroupTooSmallError("advantage normalization needs a group of at least 2, got " +
                                 std::to_string(g));
    }
    if (!(std_floor > 0.0)) {
        throw InvalidInputError("std_floor must be positive");
    }
    for (double r : rewards) {
        if (!std::isfinite(r)) throw InvalidInputError("non-finite reward in group");
    }
    const auto [min_it, max_it] = std::minmax_element(rewards.begin(), rewards.end());
    if (*min_it == *max_it) {
        return std::vector<double>(g, 0.0);
    }
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(g);
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(g);
    const double denom = std::max(std::sqrt(var), std_floor);
    std::vector<double> out(g);
    for (std::size_t i = 0; i < g; ++i) out[i] = (rewards[i] - mean) / denom;
    return out;
}

namespace {

void validate_group(const RolloutGroup& group, const GrpoConfig& cfg) {
    const std::size_t g = group.rewards.size();
    if (g < 2) {
        throw GroupTooSmallError("rollout group needs at least 2 rollouts, got " +
                                 std::to_string(g));
    }
    if (!(cfg.clip_epsilon > 0.0 && cfg.clip_epsilon < 1.0)) {
        throw InvalidInputError("clip_epsilon must lie in (0, 1)");
    }
    if (cfg.kl_coefficient < 0.0) {
        throw InvalidInputError("kl_coefficient must be non-negative");
    }
    if (group.logprobs_new.size() != g || group.logprobs_old.size() != g ||
        group.logprobs_ref.size() != g) {
        throw InvalidInputError("log-prob lists must match the group size");
    }
    if (!group.kl_new_ref.empty() && group.kl_new_ref.size() != g) {
        throw InvalidInputError("per-position KL list must match the group size");
    }
    for (std::size_t i = 0; i < g; ++i) {
        const std::size_t len = group.logprobs_new[i].size();
        if (len == 0) {
            throw InvalidInputError("rollout " + std::to_string(i) + " has no tokens");
        }
        if (group.logprobs_old[i].size() != len || group.logprobs_ref[i].size() != len ||
            (!group.kl_new_ref.empty() && group.kl_new_ref[i].size() != len)) {
            throw InvalidInputError("per-rollout lengths disagree across log-prob sets");
        }
        for (std::size_t t = 0; t < len; ++t) {
            if (!std::isfinite(group.logprobs_new[i][t]) ||
                !std::isfinite(group.logprobs_old[i][t]) ||
                !std::isfinite(group.logprobs_ref[i][t])) {
                throw InvalidInputError("non-finite log-probability in group");
            }
        }
    }
}

} // namespace

ObjectiveResult clipped_objective(const RolloutGroup& group, const GrpoConfig& cfg) {
    validate_group(group, cfg);
    const std::size_t g = group.rewards.size();
    const std::vector<double> adv = advantages(group.rewards, cfg.std_floor);
    const bool exact_kl = !group.kl_new_ref.empty();

    ObjectiveResult result;
    result.grad_logprob_new.resize(g);
    double objective = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
        const std::size_t len = group.logprobs_new[i].size();
        const double scale = 1.0 / (static_cast<double>(g) * static_cast<double>(len));
        result.grad_logprob_new[i].assign(len, 0.0);
        for (std::size_t t = 0; t < len; ++t) {
            const double rho = std::exp(group.logprobs_new[i][t] - group.logprobs_old[i][t]);
            const double unclipped = rho * adv[i];
            const double clipped =
                std::clamp(rho, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv[i];
            double term;
            double grad;
            if (unclipped <= clipped) {
                term = unclipped;
                grad = rho * adv[i];
            } else {
                term = clipped;
                grad = 0.0; // clip active: the selected branch is flat in logp_new
            }
            double kl_term;
            double kl_grad;
            if (exact_kl) {
                kl_term = group.kl_new_ref[i][t];
                kl_grad = 0.0; // supplied KL values are exogenous constants here
            } else {
                const double delta = group.logprobs_ref[i][t] - group.logprobs_new[i][t];
                kl_term = std::exp(delta) - delta - 1.0;
                kl_grad = 1.0 - std::exp(delta);
            }
            objective += scale * (term - cfg.kl_coefficient * kl_term);
            result.grad_logprob_new[i][t] = scale * (grad - cfg.kl_coefficient * kl_grad);
        }
    }
    result.objective = objective;
    return result;
}

double kl_per_position(std::span<const double> dist_new, std::span<const double> dist_ref) {
    if (dist_new.size() != dist_ref.size() || dist_new.empty()) {
        throw InvalidInputError("KL needs two non-empty distributions over the same support");
    }
    double sum_new = 0.0, sum_ref = 0.0;
    for (std::size_t v = 0; v < dist_new.size(); ++v) {
        if (!(dist_new[v] >= 0.0) || !(dist_ref[v] >= 0.0)) {
            throw InvalidInputError("probabilities must be non-negative");
        }
        sum_new += dist_new[v];
        sum_ref += dist_ref[v];
    }
    if (std::abs(sum_new - 1.0) > 1e-6 || std::abs(sum_ref - 1.0) > 1e-6) {
        throw InvalidInputError("distributions must be normalized");
    }
    double kl = 0.0;
    for (std::size_t v = 0; v < dist_new.size(); ++v) {
        if (dist_new[v] == 0.0) continue;
        if (dist_ref[v] == 0.0) {
            throw InvalidInputError("support mismatch: new has mass where ref has none");
        }
        kl += dist_new[v] * (std::log(dist_new[v]) - std::log(dist_ref[v]));
    }
    return std::max(kl, 0.0); // guard tiny negative rounding on near-equal inputs
}

namespace {

// log-softmax into out; returns the log-partition for reuse.
void log_softmax(std::span<const double> logits, std::vector<double>& out) {
    out.resize(logits.size());
    double max_logit = logits[0];
    for (double z : logits) max_logit = std::max(max_logit, z);
    double sum = 0.0;
    for (std::size_t v = 0; v < logits.size(); ++v) sum += std::exp(logits[v] - max_logit);
    const double lse = max_logit + std::log(sum);
    for (std::size_t v = 0; v < logits.size(); ++v) out[v] = logits[v] - lse;
}

} // namespace

double kl_value_and_logit_grad(std::span<const double> logits_new,
                               std::span<const double> logits_ref, std::span<double> grad_out) {
    if (logits_new.size() != logits_ref.size() || logits_new.size() != grad_out.size() ||
        logits_new.empty()) {
        throw InvalidInputError("logit spans must be non-empty and equally sized");
    }
    static thread_local std::vector<double> lp_new, lp_ref;
    log_softmax(logits_new, lp_new);
    log_softmax(logits_ref, lp_ref);
    double kl = 0.0;
    for (std::size_t v = 0; v < lp_new.size(); ++v) {
        kl += std::exp(lp_new[v]) * (lp_new[v] - lp_ref[v]);
    }
    kl = std::max(kl, 0.0);
    for (std::size_t v = 0; v < lp_new.size(); ++v) {
        grad_out[v] = std::exp(lp_new[v]) * ((lp_new[v] - lp_ref[v]) - kl);
    }
    return kl;
}

} // namespace tokdet
