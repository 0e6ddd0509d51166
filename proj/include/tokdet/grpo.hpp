#pragma once

// Group-relative advantage normalization and the clipped, KL-regularized
// policy objective, independent of any policy parameterization.

#include <cstddef>
#include <span>
#include <vector>

#include "tokdet/errors.hpp"

namespace tokdet {

struct GrpoConfig {
    double clip_epsilon = 0.2;   // ratio clip half-width, in (0,1)
    double kl_coefficient = 0.01; // beta
    double std_floor = 1e-8;      // advantage denominator floor
};

// One group of G complete rollouts for a single input. The three log-prob
// sets hold, per rollout, the log-probability of each sampled token under
// the current, sampling-time, and reference policies. kl_new_ref optionally
// carries exact per-position KL(new || ref) values computed from the full
// categorical distributions (see kl_per_position); when it is empty the
// objective falls back to the k3 sampled estimator
// exp(ref - new) - (ref - new) - 1 built from the ref log-probs.
struct RolloutGroup {
    std::vector<double> rewards;
    std::vector<std::vector<double>> logprobs_new;
    std::vector<std::vector<double>> logprobs_old;
    std::vector<std::vector<double>> logprobs_ref;
    std::vector<std::vector<double>> kl_new_ref;
};

// A_i = (r_i - mean) / max(population std, std_floor); exactly zero for an
// all-equal group. Throws GroupTooSmallError when fewer than 2 rewards.
std::vector<double> advantages(const std::vector<double>& rewards, double std_floor);

struct ObjectiveResult {
    double objective = 0.0;
    // d objective / d logprobs_new, per rollout and position.
    std::vector<std::vector<double>> grad_logprob_new;
};

// J = (1/G) sum_i (1/|o_i|) sum_t [ min(rho*A_i, clip(rho, 1-eps, 1+eps)*A_i)
//                                    - beta * KL_t ],  rho = exp(new - old).
// The gradient of the clip term is rho*A_i while the unclipped branch is
// selected and 0 once the clip is active; the exact-KL term is constant in
// logprobs_new, the k3 fallback contributes -beta * (1 - exp(ref - new)).
ObjectiveResult clipped_objective(const RolloutGroup& group, const GrpoConfig& cfg);

// Exact categorical KL(new || ref) between two normalized probability
// vectors over the same support. Throws InvalidInputError on length
// mismatch, unnormalized input, or ref lacking mass where new has some.
double kl_per_position(std::span<const double> dist_new, std::span<const double> dist_ref);

// Exact KL(softmax(logits_new) || softmax(logits_ref)) plus its gradient in
// logits_new: dKL/dz_v = p_v * ((log p_v - log q_v) - KL). grad_out must
// have the logits' length. Used by policies that backpropagate the KL
// penalty through their own logits.
double kl_value_and_logit_grad(std::span<const double> logits_new,
                               std::span<const double> logits_ref,
                               std::span<double> grad_out);

} // namespace tokdet
