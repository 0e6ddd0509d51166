#pragma once

// Serializer and fault-tolerant parser for the structured detection output
// grammar. A response is a list of phrase blocks
//
//   <|object_ref_start|>PHRASE<|object_ref_end|><|box_start|>PAYLOAD<|box_end|>
//
// joined by ", ". PAYLOAD is either the literal `None` (object absent) or
// coordinate-token groups: boxes are 4 adjacent coordinate tokens per group
// with groups joined by ", ", points are 2 per group, a polygon is one flat
// run of an even number (>= 8) of coordinate tokens. Keypoint output is a
// JSON object whose coordinate values are written as coordinate-token runs.
//
// The parser accepts arbitrary input: anything malformed produces recoverable
// diagnostics, never a crash. Records are recovered leniently; inside a
// payload only complete groups are kept and a trailing incomplete group is
// dropped.

#include <cstdint>
#include <string>
#include <vector>

#include "tokdet/coord_codec.hpp"

namespace tokdet {

inline constexpr const char* kRefStartMarker = "<|object_ref_start|>";
inline constexpr const char* kRefEndMarker = "<|object_ref_end|>";
inline constexpr const char* kBoxStartMarker = "<|box_start|>";
inline constexpr const char* kBoxEndMarker = "<|box_end|>";
inline constexpr const char* kNoneLiteral = "None";

enum class TokenKind { RefStart, RefEnd, BoxStart, BoxEnd, Coord, Text };

struct Token {
    TokenKind kind;
    int bin = -1;     // Coord only
    std::string text; // Text only

    static Token marker(TokenKind kind) { return Token{kind, -1, {}}; }
    static Token coord(int bin) { return Token{TokenKind::Coord, bin, {}}; }
    static Token text_run(std::string s) { return Token{TokenKind::Text, -1, std::move(s)}; }
};

using TokenSeq = std::vector<Token>;

// Split raw text into marker tokens, coordinate tokens "<N>" (N in 0..999,
// at most 3 digits), and literal text runs. Unknown "<...>" forms stay text.
// Never fails; lex followed by render is the identity on serializer output.
TokenSeq lex(const std::string& raw);

// Exact textual rendering of a token sequence.
std::string render(const TokenSeq& seq);

enum class PayloadKind { Box, Point, Polygon, KeypointJson };

// One coordinate-token group: 4 bins for a box (x0,y0,x1,y1), 2 for a point,
// an even count >= 8 for a polygon. span is the half-open token-index range
// the group was parsed from (both 0 when the record was built by hand);
// it never participates in equality.
struct QuantGeometry {
    std::vector<Bin> bins;
    std::size_t span_begin = 0;
    std::size_t span_end = 0;

    friend bool operator==(const QuantGeometry& a, const QuantGeometry& b) {
        return a.bins == b.bins;
    }
    friend bool operator!=(const QuantGeometry& a, const QuantGeometry& b) {
        return !(a == b);
    }
};

struct NamedKeypoint {
    std::string name;
    Bin x;
    Bin y;

    friend bool operator==(const NamedKeypoint& a, const NamedKeypoint& b) {
        return a.name == b.name && a.x == b.x && a.y == b.y;
    }
    friend bool operator!=(const NamedKeypoint& a, const NamedKeypoint& b) {
        return !(a == b);
    }
};

// One phrase block. `absent` marks the explicit None payload and excludes
// geometries. Keypoint records use `phrase` as the instance name, hold
// exactly one 4-bin geometry (the instance box) and a named keypoint list.
struct PredictionRecord {
    std::string phrase;
    PayloadKind kind = PayloadKind::Box;
    bool absent = false;
    std::vector<QuantGeometry> geometries;
    std::vector<NamedKeypoint> keypoints;

    friend bool operator==(const PredictionRecord& a, const PredictionRecord& b) {
        return a.phrase == b.phrase && a.kind == b.kind && a.absent == b.absent &&
               a.geometries == b.geometries && a.keypoints == b.keypoints;
    }
    friend bool operator!=(const PredictionRecord& a, const PredictionRecord& b) {
        return !(a == b);
    }
};

enum class Severity { Recoverable, Fatal };

struct ParseDiagnostic {
    std::size_t position = 0; // token index (instance ordinal for keypoint JSON)
    Severity severity = Severity::Recoverable;
    std::string message;
};

struct ParseResult {
    std::vector<PredictionRecord> records;
    std::vector<ParseDiagnostic> diagnostics;
};

// Serialize records to a token sequence. Box groups are emitted sorted by
// (x0, y0, x1, y1) ascending; point and polygon payloads keep their given
// order. Throws InvalidRecordError on invariant violations (wrong bin count
// for the kind, absent with geometries, mixed keypoints into non-keypoint
// records).
TokenSeq serialize(const std::vector<PredictionRecord>& records);

// Rendered-text convenience wrapper.
std::string serialize_text(const std::vector<PredictionRecord>& records);

enum class ParseMode { Lenient, Strict };

// Recover every well-formed phrase block from an arbitrary token sequence.
// expected selects how payload bins are grouped (4 / 2 / all-in-one).
// Strict mode throws InvalidRecordError on the first diagnostic instead of
// recovering. expected == KeypointJson routes through parse_keypoint_json.
ParseResult parse(const TokenSeq& seq, PayloadKind expected,
                  ParseMode mode = ParseMode::Lenient);

ParseResult parse_text(const std::string& raw, PayloadKind expected,
                       ParseMode mode = ParseMode::Lenient);

// Parse the keypoint-task JSON form: one object mapping instance names to
// {"box": <4 coord tokens>, "keypoints": {name: <2 coord tokens>, ...}}.
// Coordinate-token runs in value position are decoded; instances missing a
// box or keypoints key are skipped with a recoverable diagnostic; an
// unparseable JSON skeleton yields a single fatal diagnostic and no records.
ParseResult parse_keypoint_json(const TokenSeq& seq,
                                ParseMode mode = ParseMode::Lenient);

} // namespace tokdet
