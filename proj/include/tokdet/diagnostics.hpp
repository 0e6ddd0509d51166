#pragma once

// Behavioral failure detectors over raw output sequences (degenerate
// coordinate-token repetition, single huge boxes), the strip-and-re-evaluate
// ablation harness built on them, and token-efficiency accounting for the
// special-token versus digit-based coordinate encodings.

#include <cstdint>
#include <utility>
#include <vector>

#include "tokdet/eval_metrics.hpp"
#include "tokdet/seq_format.hpp"

namespace tokdet {

struct DuplicateFlag {
    bool flagged = false;
    int run_length = 0;         // longest equal-value run in the coordinate-token subsequence
    std::size_t pred_count = 0; // m: parsed box groups
    std::size_t gt_count = 0;   // n
    // Half-open token ranges of exact-duplicate box groups beyond each
    // group's first occurrence within its record; filled only when flagged.
    std::vector<std::pair<std::size_t, std::size_t>> removed_spans;
};

// flagged <=> (run_length >= 10 AND m > 2n). Runs are measured over the
// coordinate-token subsequence only; interleaved separators and markers
// never break or extend a run.
DuplicateFlag detect_duplicates(const TokenSeq& seq, std::size_t gt_count);

struct LargeBoxFlag {
    bool flagged = false;
    double box_area_ratio = 0.0; // of the single box when pred count is 1
};

// flagged <=> exactly one predicted box across all records AND its
// dequantized area exceeds 0.95 x image area.
LargeBoxFlag detect_large_box(const std::vector<PredictionRecord>& records, double width,
                              double height);

enum class Detector { Duplicates, LargeBox };

// One image's raw prediction sequence plus its ground truth, in continuous
// coordinates at the stated extent.
struct DiagnosedImage {
    TokenSeq seq;
    std::vector<LabeledBox> gts;
    double width = 1000.0;
    double height = 1000.0;
};

struct AblationReport {
    DetectionEvalResult before;
    DetectionEvalResult after;
    double removal_ratio = 0.0; // removed predictions / total predictions
    std::size_t flagged_images = 0;
    std::size_t total_images = 0;
    std::int64_t removed_predictions = 0;
    std::int64_t total_predictions = 0;
};

// Evaluate the detection F1 suite before and after stripping what the
// selected detector flags (duplicate groups beyond the first occurrence, or
// the single huge box).
AblationReport strip_and_reeval(const std::vector<DiagnosedImage>& images, Detector detector);

enum class TokenScheme { SpecialToken, DigitAbsolute };

struct TokenEfficiency {
    double tokens_per_box = 0.0;
    std::int64_t total_tokens = 0;
    std::int64_t coord_tokens = 0;     // 4 per box / one per digit
    std::int64_t separator_tokens = 0; // payload commas / commas + brackets
    std::int64_t box_count = 0;
};

// Coordinate-encoding cost of box records. The special-token scheme spends
// exactly 4 coordinate tokens per box plus one separator between groups;
// the digit scheme prices the textual form "[x0, y0, x1, y1]" at one token
// per digit, comma, and bracket. Throws InvalidInputError on non-box
// records.
TokenEfficiency token_efficiency(const std::vector<PredictionRecord>& records,
                                 TokenScheme scheme);

} // namespace tokdet
