#pragma once

// A desk-scale synthetic detection world and a linear-softmax sequence
// policy with closed-form gradients, used to demonstrate the behavioral
// training pipeline end to end: teacher-forced SFT learns the output
// grammar and coordinate regression but over-emits objects (its only count
// signal is noisy), and reward-driven GRPO fine-tuning corrects that
// behavior. Scenes are 1000x1000 with 1-4 objects from 5 categories; the
// policy consumes a per-category observation summary, never pixels.
//
// Token ids: 0..4 category names, 5 ref_start, 6 ref_end, 7 box_start,
// 8 box_end, 9 comma (renders as ", "), 10 None, 11 eos, and the final
// 1000 ids are coordinate bins, mirroring the production vocabulary layout.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tokdet/coord_codec.hpp"
#include "tokdet/diagnostics.hpp"
#include "tokdet/eval_metrics.hpp"
#include "tokdet/grpo.hpp"
#include "tokdet/labeled.hpp"
#include "tokdet/seq_format.hpp"

namespace tokdet::toy {

inline constexpr int kNumCategories = 5;
inline constexpr int kRefStart = 5;
inline constexpr int kRefEnd = 6;
inline constexpr int kBoxStart = 7;
inline constexpr int kBoxEnd = 8;
inline constexpr int kComma = 9;
inline constexpr int kNoneTok = 10;
inline constexpr int kEos = 11;
inline constexpr int kCoordBase = 12;
inline constexpr int kVocabSize = kCoordBase + kNumBins; // 1012
inline constexpr double kExtent = 1000.0;

const std::string& category_name(int category);

// Deterministic splitmix64-based generator. All toy-world randomness flows
// through this so runs are reproducible across platforms; the standard
// distributions are avoided because their sampling sequences are
// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    double next_double(); // uniform [0, 1)
    std::int64_t next_int(std::int64_t lo, std::int64_t hi); // uniform inclusive
    double next_normal(double mean, double stddev); // Box-Muller

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Independent stream derivation: hash the (seed, stream, index) triple.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

struct ToyObject {
    int category = 0;
    Box box;
};

// What the policy sees for one category: the instance count with +-1
// uniform noise (clamped at 0), and the mean instance box with sigma=15
// coordinate noise, clamped into the extent. Absent categories observe
// noise around zero.
struct CategoryObservation {
    double count = 0.0;
    std::array<double, 4> box{0.0, 0.0, 0.0, 0.0};
};

struct Scene {
    std::uint64_t seed = 0;
    std::vector<ToyObject> objects; // 1..4, any category mix
    std::array<CategoryObservation, kNumCategories> obs;

    std::vector<LabeledBox> labeled_gts() const;
};

Scene generate_scene(std::uint64_t seed);

// Ground-truth serialization: one record per category in id order, absent
// categories as None, boxes in quantized form.
std::vector<PredictionRecord> gt_records(const Scene& scene);
std::vector<int> gt_tokens(const Scene& scene); // ends with eos

// Bridges into the production grammar toolchain.
TokenSeq tokens_to_seq(const std::vector<int>& tokens);
std::string tokens_to_text(const std::vector<int>& tokens);

// Grammar-position automaton driving the feature map. Unexpected tokens
// leave the state unchanged: the policy can derail, and what happens when
// it does is exactly what the behavioral diagnostics measure.
enum class DecodeState {
    ExpectRefStart = 0,
    ExpectCategory,
    ExpectRefEnd,
    ExpectBoxStart,
    ExpectPayloadFirst, // x0 of the first group, or None
    ExpectY0,
    ExpectX1,
    ExpectY1,
    ExpectGroupSepOrEnd, // comma continues with another group, box_end closes
    ExpectNextGroupX0,
    ExpectRecordSepOrEos,
    ExpectBoxEndAfterNone,
    Done,
};
inline constexpr int kNumDecodeStates = 13;

struct DecodeContext {
    DecodeState state = DecodeState::ExpectRefStart;
    int active_category = -1; // set by the category token of the current record
    int boxes_emitted = 0;    // complete groups in the current record

    void advance(int token);
    bool done() const { return state == DecodeState::Done; }
};

inline constexpr int kFeatureDim = 52;

// Feature layout:
//   [0..4]   observed count per category / 4
//   [5..24]  observed box per category / 1000 (x0, y0, x1, y1)
//   [25..37] decode-state one-hot
//   [38]     boxes emitted in the active record / 4
//   [39]     bias
//   [40..44] active-category one-hot
//   [45]     active category's observed count / 4
//   [46..49] active category's observed box / 1000
//   [50]     observed value for the coordinate slot being decoded / 1000
//   [51]     groups still owed in the active record, (count - emitted) / 4,
//            live only in ExpectGroupSepOrEnd so the continue-vs-close
//            decision does not ride on dims shared with other states
//
// The two dims that exist only in ExpectGroupSepOrEnd (its one-hot and [51])
// are carried at a higher amplitude than the rest; logit movement per
// gradient step scales with the squared feature amplitude, and the reward
// phase, whose per-position step is much smaller than the supervised
// phase's, needs that leverage at exactly this state.
//
// The slot feature [50] is live in every coordinate state and, deliberately,
// also in ExpectGroupSepOrEnd: the weights that sharpen coordinate
// regression are shared with a state where no coordinate belongs, so finite
// SFT training leaves a residual pull toward coordinate tokens there. That
// residual is the degenerate-repetition failure mode the diagnostics and
// the GRPO phase act on.
void features(const Scene& scene, const DecodeContext& ctx, std::span<double> out);

class LinearPolicy {
public:
    LinearPolicy(); // zero-initialized

    std::span<const double> theta() const { return theta_; }
    std::span<double> theta() { return theta_; }

    // logits = Theta * phi
    void logits(std::span<const double> phi, std::span<double> out) const;

    // FNV-1a over the parameter bytes; used by the reference-freeze checks.
    std::uint64_t checksum() const;

private:
    std::vector<double> theta_; // kVocabSize x kFeatureDim, row-major
};

// One teacher-forced gradient step on the mean token cross-entropy of the
// batch. Returns the pre-update mean cross-entropy.
double sft_step(LinearPolicy& policy,
                const std::vector<std::pair<Scene, std::vector<int>>>& batch, double lr);

struct DecodeConfig {
    double temperature = 1.0; // 0 = greedy argmax (lowest id wins ties)
    int top_k = 0;            // 0 = off
    double top_p = 1.0;       // 1 = off
};

struct ToyRollout {
    std::vector<int> tokens;      // ends with eos unless max_len truncated
    std::vector<double> logprobs; // log pi(token | prefix), full softmax
};

// Autoregressive decoding until eos or max_len tokens. The recorded
// log-probs are always the policy's own (temperature-1 softmax), whatever
// exploration settings shaped the draw.
ToyRollout sample_sequence(const LinearPolicy& policy, const Scene& scene,
                           const DecodeConfig& decode, int max_len, Rng& rng);

struct GrpoStepStats {
    double mean_reward = 0.0;
    double mean_kl = 0.0; // exact KL(policy || ref), per position
    double objective = 0.0;
};

// One GRPO update: per scene, sample group_size rollouts at temperature 1
// (capped at max_len tokens), score them with the exclusive-assignment box
// reward against the scene's ground truth, normalize within the group, and
// ascend the clipped objective with the KL(policy || ref) penalty.
GrpoStepStats grpo_step(LinearPolicy& policy, const LinearPolicy& ref,
                        const std::vector<Scene>& scenes, const GrpoConfig& cfg,
                        int group_size, int max_len, double lr, Rng& rng);

struct PhaseEval {
    DetectionEvalResult detection;    // greedy decoding on held-out scenes
    AblationReport duplicate_ablation;
    AblationReport large_box_ablation;
    double mean_reward = 0.0;
    std::size_t duplicate_images = 0; // images the duplicate detector flags
    std::size_t large_box_images = 0;
    double mean_pred_boxes = 0.0;
};

PhaseEval evaluate_policy(const LinearPolicy& policy, std::uint64_t master_seed,
                          int n_scenes, int max_len);

struct ExperimentConfig {
    std::uint64_t seed = 0;
    int sft_steps = 3000;
    int grpo_steps = 200;
    int batch_size = 32;
    int group_size = 8;
    double lr_sft = 0.05;
    double lr_grpo = 0.01;
    double beta = 0.01;
    double clip_epsilon = 0.2;
    int eval_scenes = 500;
    int max_len = 120;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<double> sft_loss_curve;    // mean CE per step
    std::vector<GrpoStepStats> grpo_curve; // per step
    PhaseEval sft_eval;
    PhaseEval grpo_eval;
    // Wall-clock seconds; informational only and excluded from the JSON
    // form so reports stay bit-identical across runs.
    double sft_seconds = 0.0;
    double grpo_seconds = 0.0;
    double eval_seconds = 0.0;
};

// SFT then GRPO from one master seed, with held-out evaluation after each
// phase. Deterministic: identical configs give identical reports.
ExperimentReport run_experiment(const ExperimentConfig& config);

nlohmann::json to_json(const PhaseEval& eval);
nlohmann::json to_json(const ExperimentReport& report);
std::string experiment_table(const ExperimentReport& report);

} // namespace tokdet::toy
