#include "tokdet/toy_world.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "tokdet/errors.hpp"
#include "tokdet/io.hpp"
#include "tokdet/rewards.hpp"

namespace tokdet::toy {

namespace {

constexpr std::uint64_t kSftStream = 1;
constexpr std::uint64_t kGrpoStream = 2;
constexpr std::uint64_t kEvalStream = 3;
constexpr std::uint64_t kRolloutStream = 4;

// Residual pull of the coordinate-regression weights inside
// ExpectGroupSepOrEnd; see the feature-layout notes in the header.
constexpr double kSepSlotLeak = 0.75;

// Amplitude of the two features that live only in ExpectGroupSepOrEnd (the
// state one-hot and the groups-owed margin). Gradient steps move logits
// through the squared feature scale, and the reward phase's per-position
// step size is bounded by its group and length normalization at a fixed
// learning rate, far below the supervised phase's. Carrying these two dims
// at higher amplitude gives that phase workable leverage exactly at the
// continue-versus-close decision it is meant to correct, while supervised
// training simply equilibrates to the same logits with smaller weights.
constexpr double kSepFeatureGain = 6.0;

// Sharpness of the structured init on the coordinate rows. Row for bin v
// starts with weight c*vhat on the slot feature and -c*vhat^2/2 on the bias,
// vhat = (v+0.5)/1000, so the argmax over coordinate logits sits at the bin
// nearest the slot value from step 0. A scalar slot feature cannot induce a
// 1000-way bin map through per-row SGD at any reachable rate (each bin row is
// a gradient target well under once per step), so the map is wired in and
// training refines everything around it: structure, categories, None/count
// decisions, and the separator-versus-coordinate margins.
constexpr double kCoordPriorSharpness = 200.0;

// Offset added to every coordinate row on the state one-hots of the states
// whose target is always (or, for the payload-opening state, usually) a
// coordinate token. Low slot values make the quadratic prior nearly flat at
// zero, and without the offset a structure token riding bias/count features
// can win the argmax there and wedge the decoder. The separator state is
// deliberately excluded: the separator-versus-coordinate margin there is the
// behavioural failure mode the experiment studies.
constexpr double kCoordStateBoost = 25.0;

constexpr double kMinSize = 80.0;
constexpr double kMaxSize = 400.0;
constexpr double kObsNoiseSigma = 15.0;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

const std::string& category_name(int category) {
    static const std::array<std::string, kNumCategories> kNames{"ant", "bee", "cat", "dog",
                                                                "elk"};
    if (category < 0 || category >= kNumCategories) {
        throw InvalidInputError("category out of range: " + std::to_string(category));
    }
    return kNames[static_cast<std::size_t>(category)];
}

std::uint64_t Rng::next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::next_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw InvalidInputError("next_int: empty range");
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
}

double Rng::next_normal(double mean, double stddev) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
        u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return mean + stddev * radius * std::cos(angle);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t h = mix64(seed + 0x9E3779B97F4A7C15ULL);
    h = mix64(h ^ (stream + 0x9E3779B97F4A7C15ULL));
    h = mix64(h ^ (index + 0x9E3779B97F4A7C15ULL));
    return h;
}

std::vector<LabeledBox> Scene::labeled_gts() const {
    std::vector<LabeledBox> out;
    out.reserve(objects.size());
    for (const ToyObject& obj : objects) {
        out.push_back(LabeledBox{obj.box, category_name(obj.category)});
    }
    return out;
}

Scene generate_scene(std::uint64_t seed) {
    Scene scene;
    scene.seed = seed;
    Rng rng(seed);

    std::int64_t n = rng.next_int(1, 4);
    for (std::int64_t i = 0; i < n; ++i) {
        ToyObject obj;
        obj.category = static_cast<int>(rng.next_int(0, kNumCategories - 1));
        double w = kMinSize + rng.next_double() * (kMaxSize - kMinSize);
        double h = kMinSize + rng.next_double() * (kMaxSize - kMinSize);
        double x0 = rng.next_double() * (kExtent - w);
        double y0 = rng.next_double() * (kExtent - h);
        obj.box = Box{x0, y0, x0 + w, y0 + h};
        scene.objects.push_back(obj);
    }

    for (int c = 0; c < kNumCategories; ++c) {
        std::array<double, 4> mean{0.0, 0.0, 0.0, 0.0};
        std::int64_t count = 0;
        for (const ToyObject& obj : scene.objects) {
            if (obj.category != c) continue;
            ++count;
            mean[0] += obj.box.x0;
            mean[1] += obj.box.y0;
            mean[2] += obj.box.x1;
            mean[3] += obj.box.y1;
        }
        if (count > 0) {
            for (double& v : mean) v /= static_cast<double>(count);
        }
        CategoryObservation& obs = scene.obs[static_cast<std::size_t>(c)];
        for (int k = 0; k < 4; ++k) {
            double noisy = mean[static_cast<std::size_t>(k)] + rng.next_normal(0.0, kObsNoiseSigma);
            obs.box[static_cast<std::size_t>(k)] = std::clamp(noisy, 0.0, kExtent - 1.0);
        }
        obs.count = static_cast<double>(std::max<std::int64_t>(0, count + rng.next_int(-1, 1)));
    }
    return scene;
}

std::vector<PredictionRecord> gt_records(const Scene& scene) {
    std::vector<PredictionRecord> records;
    records.reserve(kNumCategories);
    for (int c = 0; c < kNumCategories; ++c) {
        PredictionRecord rec;
        rec.phrase = category_name(c);
        rec.kind = PayloadKind::Box;
        for (const ToyObject& obj : scene.objects) {
            if (obj.category != c) continue;
            QuantGeometry geom;
            geom.bins = {quantize(obj.box.x0, kExtent), quantize(obj.box.y0, kExtent),
                         quantize(obj.box.x1, kExtent), quantize(obj.box.y1, kExtent)};
            rec.geometries.push_back(std::move(geom));
        }
        rec.absent = rec.geometries.empty();
        std::sort(rec.geometries.begin(), rec.geometries.end(),
                  [](const QuantGeometry& a, const QuantGeometry& b) { return a.bins < b.bins; });
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<int> gt_tokens(const Scene& scene) {
    std::vector<int> tokens;
    std::vector<PredictionRecord> records = gt_records(scene);
    for (int c = 0; c < kNumCategories; ++c) {
        if (c > 0) tokens.push_back(kComma);
        const PredictionRecord& rec = records[static_cast<std::size_t>(c)];
        tokens.push_back(kRefStart);
        tokens.push_back(c);
        tokens.push_back(kRefEnd);
        tokens.push_back(kBoxStart);
        if (rec.absent) {
            tokens.push_back(kNoneTok);
        } else {
            for (std::size_t g = 0; g < rec.geometries.size(); ++g) {
                if (g > 0) tokens.push_back(kComma);
                for (Bin b : rec.geometries[g].bins) tokens.push_back(kCoordBase + b.value());
            }
        }
        tokens.push_back(kBoxEnd);
    }
    tokens.push_back(kEos);
    return tokens;
}

TokenSeq tokens_to_seq(const std::vector<int>& tokens) {
    TokenSeq seq;
    seq.reserve(tokens.size());
    for (int tok : tokens) {
        if (tok >= kCoordBase && tok < kVocabSize) {
            seq.push_back(Token::coord(tok - kCoordBase));
        } else if (tok >= 0 && tok < kNumCategories) {
            seq.push_back(Token::text_run(category_name(tok)));
        } else if (tok == kRefStart) {
            seq.push_back(Token::marker(TokenKind::RefStart));
        } else if (tok == kRefEnd) {
            seq.push_back(Token::marker(TokenKind::RefEnd));
        } else if (tok == kBoxStart) {
            seq.push_back(Token::marker(TokenKind::BoxStart));
        } else if (tok == kBoxEnd) {
            seq.push_back(Token::marker(TokenKind::BoxEnd));
        } else if (tok == kComma) {
            seq.push_back(Token::text_run(", "));
        } else if (tok == kNoneTok) {
            seq.push_back(Token::text_run(kNoneLiteral));
        } else if (tok == kEos) {
            // No textual form; decoding stops here.
        } else {
            throw InvalidInputError("token id out of vocabulary: " + std::to_string(tok));
        }
    }
    return seq;
}

std::string tokens_to_text(const std::vector<int>& tokens) {
    return render(tokens_to_seq(tokens));
}

void DecodeContext::advance(int token) {
    bool is_coord = token >= kCoordBase && token < kVocabSize;
    switch (state) {
    case DecodeState::ExpectRefStart:
        if (token == kRefStart) {
            state = DecodeState::ExpectCategory;
        } else if (token == kEos) {
            state = DecodeState::Done;
        }
        break;
    case DecodeState::ExpectCategory:
        if (token >= 0 && token < kNumCategories) {
            active_category = token;
            boxes_emitted = 0;
            state = DecodeState::ExpectRefEnd;
        }
        break;
    case DecodeState::ExpectRefEnd:
        if (token == kRefEnd) state = DecodeState::ExpectBoxStart;
        break;
    case DecodeState::ExpectBoxStart:
        if (token == kBoxStart) state = DecodeState::ExpectPayloadFirst;
        break;
    case DecodeState::ExpectPayloadFirst:
        if (is_coord) {
            state = DecodeState::ExpectY0;
        } else if (token == kNoneTok) {
            state = DecodeState::ExpectBoxEndAfterNone;
        }
        break;
    case DecodeState::ExpectY0:
        if (is_coord) state = DecodeState::ExpectX1;
        break;
    case DecodeState::ExpectX1:
        if (is_coord) state = DecodeState::ExpectY1;
        break;
    case DecodeState::ExpectY1:
        if (is_coord) {
            ++boxes_emitted;
            state = DecodeState::ExpectGroupSepOrEnd;
        }
        break;
    case DecodeState::ExpectGroupSepOrEnd:
        if (token == kComma) {
            state = DecodeState::ExpectNextGroupX0;
        } else if (token == kBoxEnd) {
            state = DecodeState::ExpectRecordSepOrEos;
        }
        break;
    case DecodeState::ExpectNextGroupX0:
        if (is_coord) state = DecodeState::ExpectY0;
        break;
    case DecodeState::ExpectRecordSepOrEos:
        if (token == kComma) {
            state = DecodeState::ExpectRefStart;
        } else if (token == kEos) {
            state = DecodeState::Done;
        }
        break;
    case DecodeState::ExpectBoxEndAfterNone:
        if (token == kBoxEnd) state = DecodeState::ExpectRecordSepOrEos;
        break;
    case DecodeState::Done:
        break;
    }
}

void features(const Scene& scene, const DecodeContext& ctx, std::span<double> out) {
    if (out.size() != static_cast<std::size_t>(kFeatureDim)) {
        throw InvalidInputError("feature buffer must have dimension " +
                                std::to_string(kFeatureDim));
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (int c = 0; c < kNumCategories; ++c) {
        const CategoryObservation& obs = scene.obs[static_cast<std::size_t>(c)];
        out[static_cast<std::size_t>(c)] = obs.count / 4.0;
        for (int k = 0; k < 4; ++k) {
            out[static_cast<std::size_t>(5 + 4 * c + k)] =
                obs.box[static_cast<std::size_t>(k)] / kExtent;
        }
    }
    out[static_cast<std::size_t>(25 + static_cast<int>(ctx.state))] =
        ctx.state == DecodeState::ExpectGroupSepOrEnd ? kSepFeatureGain : 1.0;
    out[38] = ctx.boxes_emitted / 4.0;
    out[39] = 1.0;
    if (ctx.active_category >= 0) {
        const CategoryObservation& obs = scene.obs[static_cast<std::size_t>(ctx.active_category)];
        out[static_cast<std::size_t>(40 + ctx.active_category)] = 1.0;
        out[45] = obs.count / 4.0;
        for (int k = 0; k < 4; ++k) {
            out[static_cast<std::size_t>(46 + k)] = obs.box[static_cast<std::size_t>(k)] / kExtent;
        }
        double slot = 0.0;
        switch (ctx.state) {
        case DecodeState::ExpectPayloadFirst:
        case DecodeState::ExpectNextGroupX0: slot = obs.box[0]; break;
        case DecodeState::ExpectY0: slot = obs.box[1]; break;
        case DecodeState::ExpectX1: slot = obs.box[2]; break;
        case DecodeState::ExpectY1: slot = obs.box[3]; break;
        case DecodeState::ExpectGroupSepOrEnd: slot = obs.box[0] * kSepSlotLeak; break;
        default: break;
        }
        out[50] = slot / kExtent;
        if (ctx.state == DecodeState::ExpectGroupSepOrEnd) {
            out[51] = kSepFeatureGain * (obs.count - static_cast<double>(ctx.boxes_emitted)) / 4.0;
        }
    }
}

LinearPolicy::LinearPolicy()
    : theta_(static_cast<std::size_t>(kVocabSize) * kFeatureDim, 0.0) {
    for (int v = 0; v < kNumBins; ++v) {
        double vhat = (static_cast<double>(v) + 0.5) / static_cast<double>(kNumBins);
        double* row = theta_.data() + static_cast<std::size_t>(kCoordBase + v) * kFeatureDim;
        row[50] = kCoordPriorSharpness * vhat;        // slot feature
        row[39] = -kCoordPriorSharpness * vhat * vhat / 2.0; // bias feature
        for (int s : {4, 5, 6, 7, 9}) row[25 + s] = kCoordStateBoost;
    }
}

void LinearPolicy::logits(std::span<const double> phi, std::span<double> out) const {
    if (phi.size() != static_cast<std::size_t>(kFeatureDim) ||
        out.size() != static_cast<std::size_t>(kVocabSize)) {
        throw InvalidInputError("logits: bad buffer sizes");
    }
    const double* row = theta_.data();
    for (int v = 0; v < kVocabSize; ++v, row += kFeatureDim) {
        double acc = 0.0;
        for (int j = 0; j < kFeatureDim; ++j) acc += row[j] * phi[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(v)] = acc;
    }
}

std::uint64_t LinearPolicy::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(theta_.data());
    std::size_t n = theta_.size() * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

// log(sum(exp(logits))) with the max trick; also usable as the normalizer.
double log_norm(std::span<const double> logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

// Rows whose assembled gradient coefficient is below this floor move weights
// by less than accumulated rounding error and are skipped in the write-back.
// Softmax tails put the vast majority of vocabulary rows under it.
constexpr double kCoeffFloor = 1e-15;

// Everything a training step needs about one distinct decoding context of a
// fixed scene. The feature map depends only on (scene, state,
// active_category, boxes_emitted), and those triples repeat heavily along a
// sequence and across a rollout group, so each step computes logits and
// distribution-level quantities once per distinct context and reuses them by
// table lookup. The gradient pass likewise pools per-position coefficients
// here and writes each context's rank-one update once.
struct CtxSlot {
    std::vector<double> phi;
    std::vector<int> nz; // indices of nonzero feature dims
    std::vector<double> lg_new;
    double logz_new = 0.0;

    // GRPO extras: reference logits, the sampling prefix sums, the exact
    // per-position KL and its gradient in logit space.
    std::vector<double> lg_ref;
    std::vector<double> cdf; // token-order prefix sums of exp(lg_new - mx)
    std::vector<double> kl_grad;
    double logz_ref = 0.0;
    double mx = 0.0;
    double kl = 0.0;

    // Pooled gradient coefficients: the softmax pull-down total, the KL
    // coefficient, and the per-sampled-token pushes.
    double drop_total = 0.0;
    double kl_total = 0.0;
    std::vector<std::pair<int, double>> tok_weights;
};

// Theta * phi over the nonzero feature dims only. Skipping exact zeros adds
// the same exact zeros the dense product would, so the result is identical.
void sparse_logits(const LinearPolicy& p, const std::vector<double>& phi,
                   const std::vector<int>& nz, std::span<double> out) {
    std::span<const double> theta = p.theta();
    for (int v = 0; v < kVocabSize; ++v) {
        const double* row = theta.data() + static_cast<std::size_t>(v) * kFeatureDim;
        double acc = 0.0;
        for (int j : nz) acc += row[j] * phi[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(v)] = acc;
    }
}

int ctx_table_key(const DecodeContext& ctx, int max_emitted) {
    int emitted = std::min(ctx.boxes_emitted, max_emitted);
    return (emitted * (kNumCategories + 1) + ctx.active_category + 1) * kNumDecodeStates +
           static_cast<int>(ctx.state);
}

// Add each pooled context update into the parameter-shaped gradient buffer:
// grad[v] += coeff[v] * phi over the context's nonzero dims.
void flush_ctx_gradient(const CtxSlot& slot, std::span<const double> coeff,
                        std::vector<double>& grad) {
    for (int v = 0; v < kVocabSize; ++v) {
        double c = coeff[static_cast<std::size_t>(v)];
        if (std::abs(c) <= kCoeffFloor) continue;
        double* g = grad.data() + static_cast<std::size_t>(v) * kFeatureDim;
        for (int j : slot.nz) g[j] += c * slot.phi[static_cast<std::size_t>(j)];
    }
}

} // namespace

double sft_step(LinearPolicy& policy,
                const std::vector<std::pair<Scene, std::vector<int>>>& batch, double lr) {
    // Loss convention: the reported loss is the mean over the batch of each
    // sequence's mean token cross-entropy. The gradient, however, sums the
    // per-sequence means over the batch, so the per-step movement scales with
    // batch size. At the fixed learning rate this keeps the high-frequency
    // rows (grammar structure, categories, None/count decisions) converging
    // well inside the schedule.
    std::vector<double> grad(static_cast<std::size_t>(kVocabSize) * kFeatureDim, 0.0);
    std::vector<double> coeff(kVocabSize);
    double batch_ce = 0.0;
    std::size_t used_sequences = 0;

    for (const auto& [scene, tokens] : batch) {
        if (tokens.empty()) continue;
        ++used_sequences;
        const double token_weight = 1.0 / static_cast<double>(tokens.size());
        double seq_ce = 0.0;

        std::vector<CtxSlot> slots;
        std::vector<int> table(static_cast<std::size_t>((static_cast<int>(tokens.size()) + 1) *
                                                        (kNumCategories + 1) * kNumDecodeStates),
                               -1);
        auto lookup = [&](const DecodeContext& ctx) -> int {
            int key = ctx_table_key(ctx, static_cast<int>(tokens.size()));
            int id = table[static_cast<std::size_t>(key)];
            if (id >= 0) return id;
            id = static_cast<int>(slots.size());
            table[static_cast<std::size_t>(key)] = id;
            CtxSlot slot;
            slot.phi.resize(kFeatureDim);
            features(scene, ctx, slot.phi);
            for (int j = 0; j < kFeatureDim; ++j) {
                if (slot.phi[static_cast<std::size_t>(j)] != 0.0) slot.nz.push_back(j);
            }
            slot.lg_new.resize(kVocabSize);
            sparse_logits(policy, slot.phi, slot.nz, slot.lg_new);
            slot.logz_new = log_norm(slot.lg_new);
            slots.push_back(std::move(slot));
            return id;
        };

        DecodeContext ctx;
        for (int tok : tokens) {
            if (tok < 0 || tok >= kVocabSize) {
                throw InvalidInputError("sft token out of vocabulary: " + std::to_string(tok));
            }
            int id = lookup(ctx);
            CtxSlot& slot = slots[static_cast<std::size_t>(id)];
            seq_ce -= slot.lg_new[static_cast<std::size_t>(tok)] - slot.logz_new;
            slot.drop_total += token_weight;
            slot.tok_weights.emplace_back(tok, token_weight);
            ctx.advance(tok);
        }
        batch_ce += seq_ce * token_weight;

        for (const CtxSlot& slot : slots) {
            for (int v = 0; v < kVocabSize; ++v) {
                double p = std::exp(slot.lg_new[static_cast<std::size_t>(v)] - slot.logz_new);
                coeff[static_cast<std::size_t>(v)] = -slot.drop_total * p;
            }
            for (const auto& [tok, w] : slot.tok_weights) {
                coeff[static_cast<std::size_t>(tok)] += w;
            }
            flush_ctx_gradient(slot, coeff, grad);
        }
    }

    if (used_sequences == 0) return 0.0;
    if (lr != 0.0) {
        std::span<double> theta = policy.theta();
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += lr * grad[i];
    }
    return batch_ce / static_cast<double>(used_sequences);
}

namespace {

struct IndexedLogit {
    double value;
    int token;
};

int sample_filtered(std::span<const double> logits, const DecodeConfig& cfg, Rng& rng) {
    // Greedy: first maximum wins, which is the lowest token id.
    if (cfg.temperature == 0.0) {
        return static_cast<int>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
    }

    std::vector<IndexedLogit> order(logits.size());
    for (std::size_t v = 0; v < logits.size(); ++v) {
        order[v] = IndexedLogit{logits[v] / cfg.temperature, static_cast<int>(v)};
    }

    bool need_sort = cfg.top_k > 0 || cfg.top_p < 1.0;
    if (need_sort) {
        std::sort(order.begin(), order.end(), [](const IndexedLogit& a, const IndexedLogit& b) {
            return a.value > b.value || (a.value == b.value && a.token < b.token);
        });
    }

    std::size_t keep = order.size();
    if (cfg.top_k > 0) keep = std::min(keep, static_cast<std::size_t>(cfg.top_k));

    // Softmax over the scaled logits, restricted to the kept prefix.
    double mx = need_sort ? order[0].value
                          : std::max_element(order.begin(), order.end(),
                                             [](const IndexedLogit& a, const IndexedLogit& b) {
                                                 return a.value < b.value;
                                             })
                                ->value;
    double total = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) total += std::exp(order[i].value - mx);

    if (cfg.top_p < 1.0) {
        // Nucleus rule: keep tokens while the mass strictly before them is
        // under top_p (computed on the full distribution).
        double cum = 0.0;
        std::size_t nucleus = 0;
        while (nucleus < order.size() && cum < cfg.top_p) {
            cum += std::exp(order[nucleus].value - mx) / total;
            ++nucleus;
        }
        keep = std::min(keep, std::max<std::size_t>(1, nucleus));
    }

    double kept_mass = 0.0;
    for (std::size_t i = 0; i < keep; ++i) kept_mass += std::exp(order[i].value - mx);
    double u = rng.next_double() * kept_mass;
    double cum = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
        cum += std::exp(order[i].value - mx);
        if (u < cum) return order[i].token;
    }
    return order[keep - 1].token;
}

} // namespace

ToyRollout sample_sequence(const LinearPolicy& policy, const Scene& scene,
                           const DecodeConfig& decode, int max_len, Rng& rng) {
    if (max_len <= 0) throw InvalidInputError("max_len must be positive");
    ToyRollout out;
    DecodeContext ctx;
    std::vector<double> phi(kFeatureDim);
    std::vector<double> logit(kVocabSize);
    while (static_cast<int>(out.tokens.size()) < max_len && !ctx.done()) {
        features(scene, ctx, phi);
        policy.logits(phi, logit);
        int tok = sample_filtered(logit, decode, rng);
        double logz = log_norm(logit);
        out.tokens.push_back(tok);
        out.logprobs.push_back(logit[static_cast<std::size_t>(tok)] - logz);
        ctx.advance(tok);
    }
    return out;
}

GrpoStepStats grpo_step(LinearPolicy& policy, const LinearPolicy& ref,
                        const std::vector<Scene>& scenes, const GrpoConfig& cfg,
                        int group_size, int max_len, double lr, Rng& rng) {
    if (scenes.empty()) throw InvalidInputError("grpo_step needs at least one scene");
    if (group_size < 2) throw GroupTooSmallError("group size must be at least 2");
    if (max_len <= 0) throw InvalidInputError("max_len must be positive");

    std::vector<double> grad(static_cast<std::size_t>(kVocabSize) * kFeatureDim, 0.0);
    std::vector<double> coeff(kVocabSize);

    GrpoStepStats stats;
    std::int64_t reward_n = 0;
    std::int64_t kl_n = 0;
    bool any_update = false;

    for (const Scene& scene : scenes) {
        std::vector<LabeledBox> gts = scene.labeled_gts();

        // Rollouts are sampled at temperature 1 with no filtering: exact
        // on-policy draws from the cached per-context prefix sums.
        std::vector<CtxSlot> slots;
        std::vector<int> table(static_cast<std::size_t>((max_len + 1) * (kNumCategories + 1) *
                                                        kNumDecodeStates),
                               -1);
        auto lookup = [&](const DecodeContext& ctx) -> int {
            int key = ctx_table_key(ctx, max_len);
            int id = table[static_cast<std::size_t>(key)];
            if (id >= 0) return id;
            id = static_cast<int>(slots.size());
            table[static_cast<std::size_t>(key)] = id;
            CtxSlot slot;
            slot.phi.resize(kFeatureDim);
            features(scene, ctx, slot.phi);
            for (int j = 0; j < kFeatureDim; ++j) {
                if (slot.phi[static_cast<std::size_t>(j)] != 0.0) slot.nz.push_back(j);
            }
            slot.lg_new.resize(kVocabSize);
            slot.lg_ref.resize(kVocabSize);
            sparse_logits(policy, slot.phi, slot.nz, slot.lg_new);
            sparse_logits(ref, slot.phi, slot.nz, slot.lg_ref);
            slot.mx = *std::max_element(slot.lg_new.begin(), slot.lg_new.end());
            slot.cdf.resize(kVocabSize);
            double run = 0.0;
            for (int v = 0; v < kVocabSize; ++v) {
                run += std::exp(slot.lg_new[static_cast<std::size_t>(v)] - slot.mx);
                slot.cdf[static_cast<std::size_t>(v)] = run;
            }
            slot.logz_new = slot.mx + std::log(run);
            slot.logz_ref = log_norm(slot.lg_ref);
            double kl = 0.0;
            for (int v = 0; v < kVocabSize; ++v) {
                double lpn = slot.lg_new[static_cast<std::size_t>(v)] - slot.logz_new;
                kl += std::exp(lpn) *
                      (lpn - (slot.lg_ref[static_cast<std::size_t>(v)] - slot.logz_ref));
            }
            slot.kl = std::max(0.0, kl);
            if (cfg.kl_coefficient != 0.0) {
                slot.kl_grad.resize(kVocabSize);
                kl_value_and_logit_grad(slot.lg_new, slot.lg_ref, slot.kl_grad);
            }
            slots.push_back(std::move(slot));
            return id;
        };

        std::vector<ToyRollout> rollouts(static_cast<std::size_t>(group_size));
        std::vector<std::vector<int>> ctx_ids(static_cast<std::size_t>(group_size));
        for (int g = 0; g < group_size; ++g) {
            ToyRollout& roll = rollouts[static_cast<std::size_t>(g)];
            DecodeContext ctx;
            while (static_cast<int>(roll.tokens.size()) < max_len && !ctx.done()) {
                int id = lookup(ctx);
                const CtxSlot& slot = slots[static_cast<std::size_t>(id)];
                double u = rng.next_double() * slot.cdf.back();
                auto it = std::upper_bound(slot.cdf.begin(), slot.cdf.end(), u);
                int tok = it == slot.cdf.end()
                              ? kVocabSize - 1
                              : static_cast<int>(it - slot.cdf.begin());
                ctx_ids[static_cast<std::size_t>(g)].push_back(id);
                roll.tokens.push_back(tok);
                roll.logprobs.push_back(slot.lg_new[static_cast<std::size_t>(tok)] -
                                        slot.logz_new);
                ctx.advance(tok);
            }
        }

        RolloutGroup group;
        for (int g = 0; g < group_size; ++g) {
            const ToyRollout& roll = rollouts[static_cast<std::size_t>(g)];
            ParseResult parsed = parse(tokens_to_seq(roll.tokens), PayloadKind::Box);
            std::vector<LabeledBox> preds = to_labeled_boxes(parsed.records, kExtent, kExtent);
            RewardReport report = box_iou_reward(preds, gts, MatchMode::Exclusive);
            group.rewards.push_back(report.reward);
            stats.mean_reward += report.reward;
            ++reward_n;

            std::size_t len = roll.tokens.size();
            std::vector<double> lp_ref(len);
            std::vector<double> kls(len);
            for (std::size_t t = 0; t < len; ++t) {
                const CtxSlot& slot =
                    slots[static_cast<std::size_t>(ctx_ids[static_cast<std::size_t>(g)][t])];
                lp_ref[t] = slot.lg_ref[static_cast<std::size_t>(roll.tokens[t])] - slot.logz_ref;
                kls[t] = slot.kl;
                stats.mean_kl += slot.kl;
                ++kl_n;
            }
            group.logprobs_new.push_back(roll.logprobs);
            group.logprobs_old.push_back(roll.logprobs);
            group.logprobs_ref.push_back(std::move(lp_ref));
            group.kl_new_ref.push_back(std::move(kls));
        }

        ObjectiveResult objective = clipped_objective(group, cfg);
        stats.objective += objective.objective;

        // Group objectives are summed over the batch (same convention as the
        // supervised phase), so reward signal does not shrink with batch size.
        for (int g = 0; g < group_size; ++g) {
            const ToyRollout& roll = rollouts[static_cast<std::size_t>(g)];
            std::size_t len = roll.tokens.size();
            double kl_coef = -cfg.kl_coefficient /
                             (static_cast<double>(group_size) * static_cast<double>(len));
            for (std::size_t t = 0; t < len; ++t) {
                CtxSlot& slot =
                    slots[static_cast<std::size_t>(ctx_ids[static_cast<std::size_t>(g)][t])];
                double weight = objective.grad_logprob_new[static_cast<std::size_t>(g)][t];
                if (weight != 0.0) {
                    any_update = true;
                    slot.drop_total += weight;
                    slot.tok_weights.emplace_back(roll.tokens[t], weight);
                }
                if (cfg.kl_coefficient != 0.0) {
                    any_update = true;
                    slot.kl_total += kl_coef;
                }
            }
        }

        for (const CtxSlot& slot : slots) {
            if (slot.drop_total == 0.0 && slot.tok_weights.empty() && slot.kl_total == 0.0) {
                continue;
            }
            for (int v = 0; v < kVocabSize; ++v) {
                double p = std::exp(slot.lg_new[static_cast<std::size_t>(v)] - slot.logz_new);
                double c = -slot.drop_total * p;
                if (slot.kl_total != 0.0) c += slot.kl_total * slot.kl_grad[static_cast<std::size_t>(v)];
                coeff[static_cast<std::size_t>(v)] = c;
            }
            for (const auto& [tok, w] : slot.tok_weights) {
                coeff[static_cast<std::size_t>(tok)] += w;
            }
            flush_ctx_gradient(slot, coeff, grad);
        }
    }

    if (any_update && lr != 0.0) {
        std::span<double> theta = policy.theta();
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += lr * grad[i];
    }

    if (reward_n > 0) stats.mean_reward /= static_cast<double>(reward_n);
    if (kl_n > 0) stats.mean_kl /= static_cast<double>(kl_n);
    stats.objective /= static_cast<double>(scenes.size());
    return stats;
}

PhaseEval evaluate_policy(const LinearPolicy& policy, std::uint64_t master_seed,
                          int n_scenes, int max_len) {
    if (n_scenes <= 0) throw InvalidInputError("n_scenes must be positive");
    PhaseEval eval;
    std::vector<DiagnosedImage> images;
    images.reserve(static_cast<std::size_t>(n_scenes));
    Rng decode_rng(mix_seed(master_seed, kEvalStream, ~0ULL)); // greedy draws nothing
    DecodeConfig greedy{0.0, 0, 1.0};
    double reward_sum = 0.0;
    std::int64_t pred_boxes = 0;

    for (int i = 0; i < n_scenes; ++i) {
        Scene scene = generate_scene(mix_seed(master_seed, kEvalStream, static_cast<std::uint64_t>(i)));
        ToyRollout roll = sample_sequence(policy, scene, greedy, max_len, decode_rng);
        TokenSeq seq = tokens_to_seq(roll.tokens);
        std::vector<LabeledBox> gts = scene.labeled_gts();

        ParseResult parsed = parse(seq, PayloadKind::Box);
        std::vector<LabeledBox> preds = to_labeled_boxes(parsed.records, kExtent, kExtent);
        reward_sum += box_iou_reward(preds, gts, MatchMode::Exclusive).reward;
        pred_boxes += static_cast<std::int64_t>(preds.size());

        if (detect_duplicates(seq, gts.size()).flagged) ++eval.duplicate_images;
        if (detect_large_box(parsed.records, kExtent, kExtent).flagged) ++eval.large_box_images;

        images.push_back(DiagnosedImage{std::move(seq), std::move(gts), kExtent, kExtent});
    }

    eval.duplicate_ablation = strip_and_reeval(images, Detector::Duplicates);
    eval.large_box_ablation = strip_and_reeval(images, Detector::LargeBox);
    eval.detection = eval.duplicate_ablation.before;
    eval.mean_reward = reward_sum / static_cast<double>(n_scenes);
    eval.mean_pred_boxes = static_cast<double>(pred_boxes) / static_cast<double>(n_scenes);
    return eval;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
    using clock = std::chrono::steady_clock;
    ExperimentReport report;
    report.config = config;

    LinearPolicy policy;
    auto t0 = clock::now();

    for (int step = 0; step < config.sft_steps; ++step) {
        std::vector<std::pair<Scene, std::vector<int>>> batch;
        batch.reserve(static_cast<std::size_t>(config.batch_size));
        for (int b = 0; b < config.batch_size; ++b) {
            std::uint64_t idx = static_cast<std::uint64_t>(step) *
                                    static_cast<std::uint64_t>(config.batch_size) +
                                static_cast<std::uint64_t>(b);
            Scene scene = generate_scene(mix_seed(config.seed, kSftStream, idx));
            std::vector<int> tokens = gt_tokens(scene);
            batch.emplace_back(std::move(scene), std::move(tokens));
        }
        report.sft_loss_curve.push_back(sft_step(policy, batch, config.lr_sft));
    }
    auto t1 = clock::now();
    report.sft_seconds = std::chrono::duration<double>(t1 - t0).count();

    LinearPolicy ref = policy; // frozen post-SFT snapshot

    report.sft_eval = evaluate_policy(policy, config.seed, config.eval_scenes, config.max_len);
    auto t2 = clock::now();

    GrpoConfig grpo_cfg;
    grpo_cfg.clip_epsilon = config.clip_epsilon;
    grpo_cfg.kl_coefficient = config.beta;
    for (int step = 0; step < config.grpo_steps; ++step) {
        std::vector<Scene> scenes;
        scenes.reserve(static_cast<std::size_t>(config.batch_size));
        for (int b = 0; b < config.batch_size; ++b) {
            std::uint64_t idx = static_cast<std::uint64_t>(step) *
                                    static_cast<std::uint64_t>(config.batch_size) +
                                static_cast<std::uint64_t>(b);
            scenes.push_back(generate_scene(mix_seed(config.seed, kGrpoStream, idx)));
        }
        Rng rollout_rng(mix_seed(config.seed, kRolloutStream, static_cast<std::uint64_t>(step)));
        report.grpo_curve.push_back(grpo_step(policy, ref, scenes, grpo_cfg, config.group_size,
                                              config.max_len, config.lr_grpo, rollout_rng));
    }
    auto t3 = clock::now();
    report.grpo_seconds = std::chrono::duration<double>(t3 - t2).count();

    report.grpo_eval = evaluate_policy(policy, config.seed, config.eval_scenes, config.max_len);
    auto t4 = clock::now();
    report.eval_seconds = std::chrono::duration<double>(t2 - t1).count() +
                          std::chrono::duration<double>(t4 - t3).count();
    return report;
}

nlohmann::json to_json(const PhaseEval& eval) {
    return nlohmann::json{{"detection", to_json(eval.detection)},
                          {"duplicate_ablation", to_json(eval.duplicate_ablation)},
                          {"large_box_ablation", to_json(eval.large_box_ablation)},
                          {"mean_reward", eval.mean_reward},
                          {"duplicate_images", eval.duplicate_images},
                          {"large_box_images", eval.large_box_images},
                          {"mean_pred_boxes", eval.mean_pred_boxes}};
}

nlohmann::json to_json(const ExperimentReport& report) {
    const ExperimentConfig& c = report.config;
    nlohmann::json grpo_curve = nlohmann::json::array();
    for (const GrpoStepStats& s : report.grpo_curve) {
        grpo_curve.push_back(nlohmann::json{{"mean_reward", s.mean_reward},
                                            {"mean_kl", s.mean_kl},
                                            {"objective", s.objective}});
    }
    double sft_gain = report.sft_eval.duplicate_ablation.after.f1_at_50 -
                      report.sft_eval.duplicate_ablation.before.f1_at_50;
    double grpo_gain = report.grpo_eval.duplicate_ablation.after.f1_at_50 -
                       report.grpo_eval.duplicate_ablation.before.f1_at_50;
    return nlohmann::json{
        {"config",
         {{"seed", c.seed},
          {"sft_steps", c.sft_steps},
          {"grpo_steps", c.grpo_steps},
          {"batch_size", c.batch_size},
          {"group_size", c.group_size},
          {"lr_sft", c.lr_sft},
          {"lr_grpo", c.lr_grpo},
          {"beta", c.beta},
          {"clip_epsilon", c.clip_epsilon},
          {"eval_scenes", c.eval_scenes},
          {"max_len", c.max_len}}},
        {"sft_loss_curve", report.sft_loss_curve},
        {"grpo_curve", std::move(grpo_curve)},
        {"sft_eval", to_json(report.sft_eval)},
        {"grpo_eval", to_json(report.grpo_eval)},
        {"summary",
         {{"sft_f1_at_50", report.sft_eval.detection.f1_at_50},
          {"grpo_f1_at_50", report.grpo_eval.detection.f1_at_50},
          {"grpo_minus_sft_f1_at_50",
           report.grpo_eval.detection.f1_at_50 - report.sft_eval.detection.f1_at_50},
          {"sft_duplicate_gain_points", sft_gain * 100.0},
          {"grpo_duplicate_gain_points", grpo_gain * 100.0},
          {"sft_removal_ratio", report.sft_eval.duplicate_ablation.removal_ratio},
          {"grpo_removal_ratio", report.grpo_eval.duplicate_ablation.removal_ratio}}}};
}

namespace {

std::string fixed(double v, int digits) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

} // namespace

std::string experiment_table(const ExperimentReport& report) {
    std::ostringstream out;
    out << "phase  F1@0.5  F1@mIoU  dup-F1@0.5-after  dup-Remov.  large-Remov.  meanR\n";
    auto row = [&out](const char* name, const PhaseEval& e) {
        out << name << "    " << fixed(e.detection.f1_at_50, 3) << "   "
            << fixed(e.detection.f1_miou, 3) << "    " << fixed(e.duplicate_ablation.after.f1_at_50, 3)
            << "             " << fixed(e.duplicate_ablation.removal_ratio * 100.0, 1) << "%"
            << "       " << fixed(e.large_box_ablation.removal_ratio * 100.0, 1) << "%"
            << "         " << fixed(e.mean_reward, 3) << "\n";
    };
    row("SFT ", report.sft_eval);
    row("GRPO", report.grpo_eval);
    return out.str();
}

} // namespace tokdet::toy
