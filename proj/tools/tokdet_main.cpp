// Command-line surface over the library: codec utilities, grammar
// round-trips, the evaluation suites, reward reports, behavioral
// diagnostics, and the synthetic training experiment. Every subcommand is a
// thin composition of library calls; no metric logic lives here.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tokdet/coord_codec.hpp"
#include "tokdet/diagnostics.hpp"
#include "tokdet/errors.hpp"
#include "tokdet/eval_metrics.hpp"
#include "tokdet/io.hpp"
#include "tokdet/rewards.hpp"
#include "tokdet/seq_format.hpp"
#include "tokdet/toy_world.hpp"

namespace {

using nlohmann::json;

struct GlobalOpts {
    std::uint64_t seed = 0;
    int threads = 1;
    bool table = false;
    std::string out_path;
};

void emit(const GlobalOpts& opts, const json& doc, const std::string& table_text = {}) {
    std::string text = opts.table && !table_text.empty() ? table_text : doc.dump(2) + "\n";
    if (opts.out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(opts.out_path, std::ios::binary);
        if (!out) throw tokdet::LoadError("cannot open output file: " + opts.out_path);
        out << text;
    }
}

tokdet::PayloadKind parse_kind(const std::string& name) {
    if (name == "box") return tokdet::PayloadKind::Box;
    if (name == "point") return tokdet::PayloadKind::Point;
    if (name == "polygon") return tokdet::PayloadKind::Polygon;
    if (name == "keypoint") return tokdet::PayloadKind::KeypointJson;
    throw tokdet::InvalidInputError("unknown payload kind: " + name);
}

json diagnostics_json(const std::vector<tokdet::ParseDiagnostic>& diags) {
    json arr = json::array();
    for (const tokdet::ParseDiagnostic& d : diags) arr.push_back(tokdet::to_json(d));
    return arr;
}

// Shared per-image assembly for the evaluation subcommands.
struct LoadedEval {
    tokdet::GroundTruthSet gt;
    tokdet::PredictionSet preds;
};

LoadedEval load_eval_inputs(const std::string& gt_path, const std::string& pred_path,
                            tokdet::PayloadKind kind) {
    LoadedEval loaded{tokdet::GroundTruthSet::load_file(gt_path), {}};
    loaded.preds = tokdet::load_predictions(pred_path, loaded.gt, kind);
    for (const std::string& warning : loaded.preds.warnings) {
        std::cerr << "warning: " << warning << "\n";
    }
    return loaded;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"structured detection-output toolkit"};
    app.require_subcommand(1);
    app.fallthrough(true); // let global options appear after a subcommand name

    GlobalOpts opts;
    app.add_option("--seed", opts.seed, "master random seed");
    app.add_option("--threads", opts.threads, "worker thread cap (evaluation is per-image pure)");
    app.add_flag("--table", opts.table, "emit a plain-text table instead of JSON where available");
    app.add_option("--out", opts.out_path, "write output to this file instead of stdout");

    // encode / decode
    auto* encode = app.add_subcommand("encode", "quantize coordinates to bins");
    std::vector<double> encode_values;
    double encode_extent = 1000.0;
    encode->add_option("values", encode_values, "coordinates to quantize")->required();
    encode->add_option("--extent", encode_extent, "image extent on this axis");

    auto* decode = app.add_subcommand("decode", "dequantize bins to coordinates");
    std::vector<int> decode_bins;
    double decode_extent = 1000.0;
    decode->add_option("bins", decode_bins, "bins to decode")->required();
    decode->add_option("--extent", decode_extent, "image extent on this axis");

    // parse / serialize
    auto* parse_cmd = app.add_subcommand("parse", "parse a raw sequence into records");
    std::string parse_input, parse_kind_name = "box";
    bool parse_strict = false;
    parse_cmd->add_option("sequence", parse_input, "raw sequence text (or @file)")->required();
    parse_cmd->add_option("--kind", parse_kind_name, "box|point|polygon|keypoint");
    parse_cmd->add_flag("--strict", parse_strict, "fail on the first malformation");

    auto* serialize_cmd = app.add_subcommand("serialize", "serialize record JSON to a sequence");
    std::string serialize_input;
    serialize_cmd->add_option("records", serialize_input, "records JSON (or @file)")->required();

    // evaluation family
    std::string gt_path, pred_path, kind_name = "box";
    auto add_eval_opts = [&](CLI::App* cmd) {
        cmd->add_option("--gt", gt_path, "ground-truth JSON file")->required();
        cmd->add_option("--pred", pred_path, "prediction file")->required();
    };
    auto* eval_det = app.add_subcommand("eval-det", "detection F1 over IoU thresholds");
    add_eval_opts(eval_det);
    eval_det->add_option("--kind", kind_name, "payload kind of the prediction file");
    auto* eval_point = app.add_subcommand("eval-point", "point-in-mask F1");
    add_eval_opts(eval_point);
    auto* eval_kpt = app.add_subcommand("eval-kpt", "keypoint F1 over OKS thresholds");
    add_eval_opts(eval_kpt);
    auto* eval_count = app.add_subcommand("eval-count", "per-image counting MAE");
    add_eval_opts(eval_count);
    eval_count->add_option("--kind", kind_name, "payload kind of the prediction file");
    auto* eval_gui = app.add_subcommand("eval-gui", "point-in-target-box accuracy");
    add_eval_opts(eval_gui);

    auto* reward_cmd = app.add_subcommand("reward", "per-image box reward reports");
    add_eval_opts(reward_cmd);
    std::string reward_mode = "exclusive";
    reward_cmd->add_option("--mode", reward_mode, "literal|exclusive");

    auto* sweep_cmd = app.add_subcommand("sweep", "confidence-threshold F1 sweep");
    add_eval_opts(sweep_cmd);

    auto* diagnose_cmd = app.add_subcommand("diagnose", "behavior flags and strip-and-reeval");
    add_eval_opts(diagnose_cmd);
    std::string detector_name = "duplicates";
    diagnose_cmd->add_option("--detector", detector_name, "duplicates|large-box");

    // toy experiment family
    auto* toy = app.add_subcommand("toy", "synthetic policy-training experiment");
    toy->require_subcommand(1);
    tokdet::toy::ExperimentConfig toy_cfg;
    auto add_toy_opts = [&](CLI::App* cmd) {
        cmd->add_option("--sft-steps", toy_cfg.sft_steps, "SFT gradient steps");
        cmd->add_option("--grpo-steps", toy_cfg.grpo_steps, "GRPO gradient steps");
        cmd->add_option("--group-size", toy_cfg.group_size, "rollouts per scene");
        cmd->add_option("--beta", toy_cfg.beta, "KL penalty coefficient");
        cmd->add_option("--clip-eps", toy_cfg.clip_epsilon, "ratio clip half-width");
        cmd->add_option("--batch-size", toy_cfg.batch_size, "scenes per step");
        cmd->add_option("--eval-scenes", toy_cfg.eval_scenes, "held-out evaluation scenes");
        cmd->add_option("--max-len", toy_cfg.max_len, "decoding length cap");
    };
    auto* toy_sft = toy->add_subcommand("sft", "teacher-forced training only");
    add_toy_opts(toy_sft);
    auto* toy_grpo = toy->add_subcommand("grpo", "SFT then GRPO fine-tuning");
    add_toy_opts(toy_grpo);
    auto* toy_exp = toy->add_subcommand("experiment", "full behavioral experiment report");
    add_toy_opts(toy_exp);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*encode) {
            json bins = json::array();
            for (double v : encode_values) {
                bins.push_back(tokdet::quantize(v, encode_extent).value());
            }
            emit(opts, json{{"extent", encode_extent}, {"bins", std::move(bins)}});
            return 0;
        }
        if (*decode) {
            json values = json::array();
            for (int b : decode_bins) {
                values.push_back(tokdet::dequantize(tokdet::Bin(b), decode_extent));
            }
            emit(opts, json{{"extent", decode_extent}, {"values", std::move(values)}});
            return 0;
        }
        if (*parse_cmd) {
            std::string text = parse_input;
            if (!text.empty() && text[0] == '@') {
                std::ifstream in(text.substr(1), std::ios::binary);
                if (!in) throw tokdet::LoadError("cannot open file: " + text.substr(1));
                text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
            }
            tokdet::ParseResult result = tokdet::parse_text(
                text, parse_kind(parse_kind_name),
                parse_strict ? tokdet::ParseMode::Strict : tokdet::ParseMode::Lenient);
            json records = json::array();
            for (const tokdet::PredictionRecord& rec : result.records) {
                records.push_back(tokdet::to_json(rec));
            }
            emit(opts, json{{"records", std::move(records)},
                            {"diagnostics", diagnostics_json(result.diagnostics)}});
            return 0;
        }
        if (*serialize_cmd) {
            std::string text = serialize_input;
            if (!text.empty() && text[0] == '@') {
                std::ifstream in(text.substr(1), std::ios::binary);
                if (!in) throw tokdet::LoadError("cannot open file: " + text.substr(1));
                text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
            }
            json doc = json::parse(text, nullptr, false);
            if (doc.is_discarded() || !doc.is_array()) {
                throw tokdet::LoadError("serialize expects a JSON array of records");
            }
            std::vector<tokdet::PredictionRecord> records;
            for (const json& rec_v : doc) {
                tokdet::PredictionRecord rec;
                rec.phrase = rec_v.value("phrase", std::string{});
                std::string kind = rec_v.value("kind", std::string{"box"});
                rec.kind = parse_kind(kind == "keypoint_json" ? "keypoint" : kind);
                rec.absent = rec_v.value("absent", false);
                if (auto it = rec_v.find("groups"); it != rec_v.end() && it->is_array()) {
                    for (const json& group : *it) {
                        tokdet::QuantGeometry geom;
                        for (const json& b : group) {
                            geom.bins.emplace_back(b.get<int>());
                        }
                        rec.geometries.push_back(std::move(geom));
                    }
                }
                if (auto it = rec_v.find("keypoints"); it != rec_v.end() && it->is_object()) {
                    for (auto& [name, xy] : it->items()) {
                        rec.keypoints.push_back(tokdet::NamedKeypoint{
                            name, tokdet::Bin(xy.at(0).get<int>()), tokdet::Bin(xy.at(1).get<int>())});
                    }
                }
                records.push_back(std::move(rec));
            }
            emit(opts, json{{"sequence", tokdet::serialize_text(records)}});
            return 0;
        }

        if (*eval_det) {
            LoadedEval loaded = load_eval_inputs(gt_path, pred_path, parse_kind(kind_name));
            std::vector<tokdet::ImageDetections> images;
            for (const tokdet::ImagePredictions& pred : loaded.preds.images) {
                const tokdet::GtImage& img = loaded.gt.image(pred.image_id);
                images.push_back(tokdet::ImageDetections{
                    tokdet::to_labeled_boxes(pred.records, img.width, img.height),
                    loaded.gt.labeled_boxes(pred.image_id)});
            }
            tokdet::DetectionEvalResult result = tokdet::detection_f1(images);
            emit(opts, tokdet::to_json(result), tokdet::detection_table(result));
            return 0;
        }
        if (*eval_point) {
            LoadedEval loaded = load_eval_inputs(gt_path, pred_path, tokdet::PayloadKind::Point);
            std::vector<tokdet::ImagePointEval> images;
            for (const tokdet::ImagePredictions& pred : loaded.preds.images) {
                const tokdet::GtImage& img = loaded.gt.image(pred.image_id);
                images.push_back(tokdet::ImagePointEval{
                    tokdet::to_labeled_points(pred.records, img.width, img.height),
                    loaded.gt.labeled_masks(pred.image_id)});
            }
            emit(opts, tokdet::to_json(tokdet::point_f1(images)));
            return 0;
        }
        if (*eval_kpt) {
            LoadedEval loaded =
                load_eval_inputs(gt_path, pred_path, tokdet::PayloadKind::KeypointJson);
            std::vector<tokdet::ImageKeypoints> images;
            for (const tokdet::ImagePredictions& pred : loaded.preds.images) {
                const tokdet::GtImage& img = loaded.gt.image(pred.image_id);
                images.push_back(tokdet::ImageKeypoints{
                    tokdet::to_keypoint_instances(pred.records, img.width, img.height),
                    loaded.gt.keypoint_instances(pred.image_id)});
            }
            tokdet::KeypointEvalResult result =
                tokdet::keypoint_f1_suite(images, loaded.gt.oks_constants());
            emit(opts, tokdet::to_json(result));
            return 0;
        }
        if (*eval_count) {
            LoadedEval loaded = load_eval_inputs(gt_path, pred_path, parse_kind(kind_name));
            std::map<std::string, std::int64_t> gt_counts = loaded.gt.counts_per_image();
            std::map<std::string, std::int64_t> pred_counts;
            for (const auto& kv : gt_counts) pred_counts[kv.first] = 0;
            for (const tokdet::ImagePredictions& pred : loaded.preds.images) {
                std::int64_t n = 0;
                for (const tokdet::PredictionRecord& rec : pred.records) {
                    n += static_cast<std::int64_t>(rec.geometries.size());
                }
                pred_counts[pred.image_id] = n;
            }
            emit(opts, json{{"mae", tokdet::count_mae(pred_counts, gt_counts)}});
            return 0;
        }
        if (*eval_gui) {
            LoadedEval loaded = load_eval_inputs(gt_path, pred_path, tokdet::PayloadKind::Point);
            // Each image is one query: first predicted point against the
            // image's single target box.
            std::vector<tokdet::Point> points;
            std::vector<tokdet::Box> targets;
            for (const tokdet::ImagePredictions& pred : loaded.preds.images) {
                const tokdet::GtImage& img = loaded.gt.image(pred.image_id);
                std::vector<tokdet::LabeledPoint> pts =
                    tokdet::to_labeled_points(pred.records, img.width, img.height);
                std::vector<tokdet::LabeledBox> boxes = loaded.gt.labeled_boxes(pred.image_id);
                if (pts.empty() || boxes.empty()) continue;
                points.push_back(pts.front().point);
                targets.push_back(boxes.front().box);
            }
            emit(opts, json{{"accuracy", tokdet::gui_accuracy(points, targets)},
                            {"queries", points.size()}});
            return 0;
        }
        if (*reward_cmd) {
            LoadedEval loaded = load_eval_inputs(gt_path, pred_path, tokdet::PayloadKind::Box);
            tokdet::MatchMode mode = reward_mode == "literal" ? tokdet::MatchMode::Literal
                                                              : tokdet::MatchMode::Exclusive;
            json per_image = json::array();
            for (const tokdet::ImagePredictions& pred : loaded.preds.images) {
                const tokdet::GtImage& img = loaded.gt.image(pred.image_id);
                tokdet::RewardReport report = tokdet::box_iou_reward(
                    tokdet::to_labeled_boxes(pred.records, img.width, img.height),
                    loaded.gt.labeled_boxes(pred.image_id), mode);
                json row = tokdet::to_json(report);
                row["image_id"] = pred.image_id;
                per_image.push_back(std::move(row));
            }
            emit(opts, json{{"mode", reward_mode}, {"per_image", std::move(per_image)}});
            return 0;
        }
        if (*sweep_cmd) {
            LoadedEval loaded = load_eval_inputs(gt_path, pred_path, tokdet::PayloadKind::Box);
            if (!loaded.preds.has_confidence) {
                throw tokdet::InvalidInputError(
                    "sweep needs a JSON prediction file with a confidence for every box");
            }
            std::vector<tokdet::ScoredImageDetections> images;
            for (const tokdet::ImagePredictions& pred : loaded.preds.images) {
                const tokdet::GtImage& img = loaded.gt.image(pred.image_id);
                images.push_back(tokdet::ScoredImageDetections{
                    tokdet::to_labeled_boxes(pred.records, img.width, img.height),
                    pred.confidences, loaded.gt.labeled_boxes(pred.image_id)});
            }
            emit(opts, tokdet::to_json(tokdet::score_threshold_sweep(images)));
            return 0;
        }
        if (*diagnose_cmd) {
            LoadedEval loaded = load_eval_inputs(gt_path, pred_path, tokdet::PayloadKind::Box);
            tokdet::Detector detector = detector_name == "large-box"
                                            ? tokdet::Detector::LargeBox
                                            : tokdet::Detector::Duplicates;
            std::vector<tokdet::DiagnosedImage> images;
            for (const tokdet::ImagePredictions& pred : loaded.preds.images) {
                const tokdet::GtImage& img = loaded.gt.image(pred.image_id);
                images.push_back(tokdet::DiagnosedImage{pred.seq,
                                                        loaded.gt.labeled_boxes(pred.image_id),
                                                        img.width, img.height});
            }
            tokdet::AblationReport report = tokdet::strip_and_reeval(images, detector);
            emit(opts, tokdet::to_json(report), tokdet::ablation_table(report));
            return 0;
        }

        if (*toy) {
            toy_cfg.seed = opts.seed;
            if (*toy_sft) toy_cfg.grpo_steps = 0;
            tokdet::toy::ExperimentReport report = tokdet::toy::run_experiment(toy_cfg);
            std::cerr << "timings: sft " << report.sft_seconds << "s, grpo "
                      << report.grpo_seconds << "s, eval " << report.eval_seconds << "s\n";
            emit(opts, tokdet::toy::to_json(report), tokdet::toy::experiment_table(report));
            return 0;
        }
    } catch (const tokdet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
