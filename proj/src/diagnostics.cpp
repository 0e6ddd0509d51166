#include "tokdet/diagnostics.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "tokdet/errors.hpp"

namespace tokdet {

DuplicateFlag detect_duplicates(const TokenSeq& seq, std::size_t gt_count) {
    DuplicateFlag flag;
    flag.gt_count = gt_count;

    int run = 0;
    int last_bin = -1;
    for (const Token& tok : seq) {
        if (tok.kind != TokenKind::Coord) continue; // separators never break a run
        if (tok.bin == last_bin) {
            ++run;
        } else {
            run = 1;
            last_bin = tok.bin;
        }
        flag.run_length = std::max(flag.run_length, run);
    }

    ParseResult parsed = parse(seq, PayloadKind::Box);
    for (const PredictionRecord& rec : parsed.records) flag.pred_count += rec.geometries.size();

    flag.flagged = flag.run_length >= 10 && flag.pred_count > 2 * gt_count;
    if (!flag.flagged) return flag;

    // Exact-duplicate groups within each record, first occurrence kept.
    for (const PredictionRecord& rec : parsed.records) {
        std::vector<std::vector<int>> seen;
        for (const QuantGeometry& g : rec.geometries) {
            std::vector<int> key;
            key.reserve(g.bins.size());
            for (Bin b : g.bins) key.push_back(b.value());
            if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
                flag.removed_spans.emplace_back(g.span_begin, g.span_end);
            } else {
                seen.push_back(std::move(key));
            }
        }
    }
    return flag;
}

LargeBoxFlag detect_large_box(const std::vector<PredictionRecord>& records, double width,
                              double height) {
    if (!(width > 0.0) || !(height > 0.0)) {
        throw InvalidInputError("image extent must be positive");
    }
    LargeBoxFlag flag;
    const QuantGeometry* only = nullptr;
    std::size_t boxes = 0;
    for (const PredictionRecord& rec : records) {
        for (const QuantGeometry& g : rec.geometries) {
            ++boxes;
            only = &g;
        }
    }
    if (boxes != 1 || only->bins.size() != 4) return flag;
    Box box{dequantize(only->bins[0], width), dequantize(only->bins[1], height),
            dequantize(only->bins[2], width), dequantize(only->bins[3], height)};
    flag.box_area_ratio = area(box) / (width * height);
    flag.flagged = flag.box_area_ratio > 0.95;
    return flag;
}

namespace {

std::vector<LabeledBox> boxes_from_records(const std::vector<PredictionRecord>& records,
                                           double width, double height,
                                           const std::vector<std::pair<std::size_t, std::size_t>>*
                                               skip_spans) {
    std::vector<LabeledBox> out;
    for (const PredictionRecord& rec : records) {
        for (const QuantGeometry& g : rec.geometries) {
            if (g.bins.size() != 4) continue;
            if (skip_spans != nullptr) {
                auto hit = std::find(skip_spans->begin(), skip_spans->end(),
                                     std::make_pair(g.span_begin, g.span_end));
                if (hit != skip_spans->end()) continue;
            }
            out.push_back(LabeledBox{Box{dequantize(g.bins[0], width), dequantize(g.bins[1], height),
                                         dequantize(g.bins[2], width), dequantize(g.bins[3], height)},
                                     rec.phrase});
        }
    }
    return out;
}

} // namespace

AblationReport strip_and_reeval(const std::vector<DiagnosedImage>& images, Detector detector) {
    AblationReport report;
    report.total_images = images.size();
    std::vector<ImageDetections> before, after;
    before.reserve(images.size());
    after.reserve(images.size());

    for (const DiagnosedImage& image : images) {
        ParseResult parsed = parse(image.seq, PayloadKind::Box);
        std::vector<LabeledBox> preds =
            boxes_from_records(parsed.records, image.width, image.height, nullptr);
        std::vector<LabeledBox> kept = preds;

        if (detector == Detector::Duplicates) {
            DuplicateFlag flag = detect_duplicates(image.seq, image.gts.size());
            if (flag.flagged) {
                ++report.flagged_images;
                kept = boxes_from_records(parsed.records, image.width, image.height,
                                          &flag.removed_spans);
            }
        } else {
            LargeBoxFlag flag = detect_large_box(parsed.records, image.width, image.height);
            if (flag.flagged) {
                ++report.flagged_images;
                kept.clear(); // the single huge box is the only prediction
            }
        }

        report.total_predictions += static_cast<std::int64_t>(preds.size());
        report.removed_predictions += static_cast<std::int64_t>(preds.size() - kept.size());
        before.push_back(ImageDetections{std::move(preds), image.gts});
        after.push_back(ImageDetections{std::move(kept), image.gts});
    }

    report.before = detection_f1(before);
    report.after = detection_f1(after);
    report.removal_ratio =
        report.total_predictions > 0
            ? static_cast<double>(report.removed_predictions) /
                  static_cast<double>(report.total_predictions)
            : 0.0;
    return report;
}

namespace {

std::int64_t digit_count(int value) {
    std::int64_t digits = 1;
    while (value >= 10) {
        value /= 10;
        ++digits;
    }
    return digits;
}

} // namespace

TokenEfficiency token_efficiency(const std::vector<PredictionRecord>& records,
                                 TokenScheme scheme) {
    TokenEfficiency eff;
    for (const PredictionRecord& rec : records) {
        if (rec.kind != PayloadKind::Box) {
            throw InvalidInputError("token efficiency is defined for box records only");
        }
        std::size_t boxes_in_record = 0;
        for (const QuantGeometry& g : rec.geometries) {
            if (g.bins.size() != 4) {
                throw InvalidInputError("box geometry must have exactly 4 bins");
            }
            ++boxes_in_record;
            ++eff.box_count;
            if (scheme == TokenScheme::SpecialToken) {
                eff.coord_tokens += 4;
            } else {
                // Textual "[x0, y0, x1, y1]": one token per digit, comma, bracket.
                for (Bin b : g.bins) eff.coord_tokens += digit_count(b.value());
                eff.separator_tokens += 3 + 2;
            }
        }
        if (scheme == TokenScheme::SpecialToken && boxes_in_record > 1) {
            eff.separator_tokens += static_cast<std::int64_t>(boxes_in_record - 1);
        }
    }
    eff.total_tokens = eff.coord_tokens + eff.separator_tokens;
    eff.tokens_per_box = eff.box_count > 0 ? static_cast<double>(scheme == TokenScheme::SpecialToken
                                                                     ? eff.coord_tokens
                                                                     : eff.total_tokens) /
                                                 static_cast<double>(eff.box_count)
                                           : 0.0;
    return eff;
}

} // namespace tokdet
