#include "tokdet/seq_format.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <utility>

#include <json.hpp>

#include "tokdet/errors.hpp"

namespace tokdet {

namespace {

struct MarkerDef {
    const char* text;
    TokenKind kind;
};

constexpr MarkerDef kMarkers[] = {
    {"<|object_ref_start|>", TokenKind::RefStart},
    {"<|object_ref_end|>", TokenKind::RefEnd},
    {"<|box_start|>", TokenKind::BoxStart},
    {"<|box_end|>", TokenKind::BoxEnd},
};

// Matches "<N>" with 1..3 digits at position i; returns the bin or -1.
int match_coord(const std::string& raw, std::size_t i, std::size_t* end) {
    std::size_t j = i + 1;
    int value = 0;
    int digits = 0;
    while (j < raw.size() && std::isdigit(static_cast<unsigned char>(raw[j])) && digits < 4) {
        value = value * 10 + (raw[j] - '0');
        ++digits;
        ++j;
    }
    if (digits < 1 || digits > 3 || j >= raw.size() || raw[j] != '>') return -1;
    *end = j + 1;
    return value;
}

} // namespace

TokenSeq lex(const std::string& raw) {
    TokenSeq seq;
    std::string text;
    auto flush_text = [&] {
        if (!text.empty()) {
            seq.push_back(Token::text_run(std::move(text)));
            text.clear();
        }
    };
    std::size_t i = 0;
    while (i < raw.size()) {
        if (raw[i] == '<') {
            bool matched = false;
            for (const MarkerDef& m : kMarkers) {
                std::size_t len = std::strlen(m.text);
                if (raw.compare(i, len, m.text) == 0) {
                    flush_text();
                    seq.push_back(Token::marker(m.kind));
                    i += len;
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
            std::size_t end = 0;
            int bin = match_coord(raw, i, &end);
            if (bin >= 0 && bin < kNumBins) {
                flush_text();
                seq.push_back(Token::coord(bin));
                i = end;
                continue;
            }
        }
        text += raw[i];
        ++i;
    }
    flush_text();
    return seq;
}

namespace {

std::string render_token(const Token& tok) {
    switch (tok.kind) {
        case TokenKind::RefStart: return kRefStartMarker;
        case TokenKind::RefEnd: return kRefEndMarker;
        case TokenKind::BoxStart: return kBoxStartMarker;
        case TokenKind::BoxEnd: return kBoxEndMarker;
        case TokenKind::Coord: return "<" + std::to_string(tok.bin) + ">";
        case TokenKind::Text: return tok.text;
    }
    return {};
}

} // namespace

std::string render(const TokenSeq& seq) {
    std::string out;
    for (const Token& tok : seq) out += render_token(tok);
    return out;
}

namespace {

std::size_t group_size_for(PayloadKind kind) {
    return kind == PayloadKind::Point ? 2 : 4;
}

void validate_phrase(const std::string& phrase) {
    if (phrase.find("<|") != std::string::npos) {
        throw InvalidRecordError("phrase must not contain marker text: \"" + phrase + "\"");
    }
}

void validate_record(const PredictionRecord& rec) {
    validate_phrase(rec.phrase);
    if (rec.absent && !rec.geometries.empty()) {
        throw InvalidRecordError("absent record carries geometries: \"" + rec.phrase + "\"");
    }
    if (rec.kind != PayloadKind::KeypointJson && !rec.keypoints.empty()) {
        throw InvalidRecordError("keypoints on a non-keypoint record: \"" + rec.phrase + "\"");
    }
    switch (rec.kind) {
        case PayloadKind::Box:
        case PayloadKind::Point: {
            if (!rec.absent && rec.geometries.empty()) {
                throw InvalidRecordError("non-absent record without geometry: \"" + rec.phrase + "\"");
            }
            std::size_t want = group_size_for(rec.kind);
            for (const QuantGeometry& g : rec.geometries) {
                if (g.bins.size() != want) {
                    throw InvalidRecordError("geometry needs exactly " + std::to_string(want) +
                                             " bins, got " + std::to_string(g.bins.size()));
                }
            }
            break;
        }
        case PayloadKind::Polygon: {
            if (rec.absent) break;
            if (rec.geometries.size() != 1) {
                throw InvalidRecordError("polygon record needs exactly one geometry per block, got " +
                                         std::to_string(rec.geometries.size()));
            }
            const std::size_t count = rec.geometries[0].bins.size();
            if (count < 8 || count % 2 != 0) {
                throw InvalidRecordError("polygon needs an even coordinate count >= 8, got " +
                                         std::to_string(count));
            }
            break;
        }
        case PayloadKind::KeypointJson: {
            if (rec.absent) {
                throw InvalidRecordError("keypoint record cannot be absent: \"" + rec.phrase + "\"");
            }
            if (rec.geometries.size() != 1 || rec.geometries[0].bins.size() != 4) {
                throw InvalidRecordError("keypoint record needs exactly one 4-bin box: \"" +
                                         rec.phrase + "\"");
            }
            auto json_safe = [](const std::string& s) {
                for (char c : s) {
                    if (c == '"' || c == '\\' || static_cast<unsigned char>(c) < 0x20) return false;
                }
                return true;
            };
            if (!json_safe(rec.phrase)) {
                throw InvalidRecordError("keypoint instance name not JSON-safe: \"" + rec.phrase + "\"");
            }
            for (const NamedKeypoint& kp : rec.keypoints) {
                if (!json_safe(kp.name)) {
                    throw InvalidRecordError("keypoint name not JSON-safe: \"" + kp.name + "\"");
                }
            }
            break;
        }
    }
}

void emit_group(TokenSeq& out, const QuantGeometry& g) {
    for (Bin b : g.bins) out.push_back(Token::coord(b.value()));
}

TokenSeq serialize_keypoint_records(const std::vector<PredictionRecord>& records) {
    TokenSeq out;
    std::string frag = "{";
    for (std::size_t r = 0; r < records.size(); ++r) {
        const PredictionRecord& rec = records[r];
        frag += "\"" + rec.phrase + "\": {\"box\": ";
        out.push_back(Token::text_run(std::move(frag)));
        emit_group(out, rec.geometries[0]);
        frag = ", \"keypoints\": {";
        for (std::size_t k = 0; k < rec.keypoints.size(); ++k) {
            frag += "\"" + rec.keypoints[k].name + "\": ";
            out.push_back(Token::text_run(std::move(frag)));
            out.push_back(Token::coord(rec.keypoints[k].x.value()));
            out.push_back(Token::coord(rec.keypoints[k].y.value()));
            frag = (k + 1 < rec.keypoints.size()) ? ", " : "";
        }
        frag += "}}";
        if (r + 1 < records.size()) frag += ", ";
    }
    frag += "}";
    out.push_back(Token::text_run(std::move(frag)));
    return out;
}

} // namespace

TokenSeq serialize(const std::vector<PredictionRecord>& records) {
    if (records.empty()) return {};
    PayloadKind kind = records[0].kind;
    for (const PredictionRecord& rec : records) {
        if (rec.kind != kind) {
            throw InvalidRecordError("all records in one response must share a payload kind");
        }
        validate_record(rec);
    }
    if (kind == PayloadKind::KeypointJson) return serialize_keypoint_records(records);

    TokenSeq out;
    for (std::size_t r = 0; r < records.size(); ++r) {
        const PredictionRecord& rec = records[r];
        out.push_back(Token::marker(TokenKind::RefStart));
        if (!rec.phrase.empty()) out.push_back(Token::text_run(rec.phrase));
        out.push_back(Token::marker(TokenKind::RefEnd));
        out.push_back(Token::marker(TokenKind::BoxStart));
        if (rec.absent) {
            out.push_back(Token::text_run(kNoneLiteral));
        } else if (kind == PayloadKind::Box) {
            std::vector<QuantGeometry> groups = rec.geometries;
            std::sort(groups.begin(), groups.end(),
                      [](const QuantGeometry& a, const QuantGeometry& b) {
                          return std::lexicographical_compare(
                              a.bins.begin(), a.bins.end(), b.bins.begin(), b.bins.end(),
                              [](Bin x, Bin y) { return x.value() < y.value(); });
                      });
            for (std::size_t g = 0; g < groups.size(); ++g) {
                if (g > 0) out.push_back(Token::text_run(", "));
                emit_group(out, groups[g]);
            }
        } else {
            for (std::size_t g = 0; g < rec.geometries.size(); ++g) {
                if (g > 0) out.push_back(Token::text_run(", "));
                emit_group(out, rec.geometries[g]);
            }
        }
        out.push_back(Token::marker(TokenKind::BoxEnd));
        if (r + 1 < records.size()) out.push_back(Token::text_run(", "));
    }
    return out;
}

std::string serialize_text(const std::vector<PredictionRecord>& records) {
    return render(serialize(records));
}

namespace {

bool is_separator_text(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](char c) {
        return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ',';
    });
}

bool is_none_text(const std::string& s) {
    std::string stripped;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ',') continue;
        stripped += c;
    }
    return stripped == kNoneLiteral;
}

class DiagnosticSink {
public:
    void add(std::size_t position, Severity severity, std::string message) {
        // Positions are strictly increasing within a report; a second issue
        // at the same token is folded into the first.
        if (!diags_.empty() && position <= diags_.back().position) return;
        diags_.push_back(ParseDiagnostic{position, severity, std::move(message)});
    }

    std::vector<ParseDiagnostic> take() { return std::move(diags_); }

private:
    std::vector<ParseDiagnostic> diags_;
};

struct PayloadScan {
    std::vector<Bin> bins;
    std::vector<std::size_t> positions; // token index per bin
    bool saw_none = false;
};

// Chunk scanned bins into kind-sized groups; incomplete trailing groups are
// dropped by the caller's rules.
std::vector<QuantGeometry> chunk_groups(const PayloadScan& scan, std::size_t group_size) {
    std::vector<QuantGeometry> groups;
    const std::size_t complete = scan.bins.size() / group_size;
    groups.reserve(complete);
    for (std::size_t g = 0; g < complete; ++g) {
        QuantGeometry geom;
        geom.bins.assign(scan.bins.begin() + g * group_size,
                         scan.bins.begin() + (g + 1) * group_size);
        geom.span_begin = scan.positions[g * group_size];
        geom.span_end = scan.positions[(g + 1) * group_size - 1] + 1;
        groups.push_back(std::move(geom));
    }
    return groups;
}

ParseResult parse_blocks(const TokenSeq& seq, PayloadKind expected) {
    ParseResult result;
    DiagnosticSink diags;
    const std::size_t n = seq.size();
    std::size_t i = 0;

    while (i < n) {
        // Hunt for the next phrase block, tolerating separator text.
        if (seq[i].kind == TokenKind::Text && is_separator_text(seq[i].text)) {
            ++i;
            continue;
        }
        if (seq[i].kind != TokenKind::RefStart) {
            diags.add(i, Severity::Recoverable, "stray tokens before phrase block");
            while (i < n && seq[i].kind != TokenKind::RefStart) ++i;
            continue;
        }
        ++i; // consume ref-start

        // Phrase: everything up to ref-end, rendered back to text.
        std::string phrase;
        bool phrase_closed = false;
        while (i < n) {
            if (seq[i].kind == TokenKind::RefEnd) {
                phrase_closed = true;
                ++i;
                break;
            }
            if (seq[i].kind == TokenKind::BoxStart) {
                diags.add(i, Severity::Recoverable, "phrase not closed before payload");
                phrase_closed = true; // recover: payload follows immediately
                break;
            }
            if (seq[i].kind == TokenKind::RefStart || seq[i].kind == TokenKind::BoxEnd) break;
            phrase += render_token(seq[i]);
            ++i;
        }
        if (!phrase_closed) {
            diags.add(i < n ? i : (n == 0 ? 0 : n - 1), Severity::Recoverable,
                      "phrase block without ref-end; dropped");
            continue; // rescan from the token we stopped at (or EOF)
        }

        // Payload opener.
        bool opened = false;
        while (i < n) {
            if (seq[i].kind == TokenKind::BoxStart) {
                opened = true;
                ++i;
                break;
            }
            if (seq[i].kind == TokenKind::RefStart) break;
            if (seq[i].kind == TokenKind::Text && is_separator_text(seq[i].text)) {
                ++i;
                continue;
            }
            diags.add(i, Severity::Recoverable, "unexpected token before box-start");
            ++i;
        }
        if (!opened) {
            diags.add(i < n ? i : (n == 0 ? 0 : n - 1), Severity::Recoverable,
                      "phrase block without payload; dropped");
            continue;
        }

        // Payload body.
        PayloadScan scan;
        bool payload_closed = false;
        while (i < n) {
            const Token& tok = seq[i];
            if (tok.kind == TokenKind::BoxEnd) {
                payload_closed = true;
                ++i;
                break;
            }
            if (tok.kind == TokenKind::RefStart) {
                diags.add(i, Severity::Recoverable, "payload not closed before next block");
                break; // do not consume; next block starts here
            }
            if (tok.kind == TokenKind::Coord) {
                scan.bins.push_back(Bin(tok.bin));
                scan.positions.push_back(i);
                ++i;
                continue;
            }
            if (tok.kind == TokenKind::Text) {
                if (is_none_text(tok.text)) {
                    scan.saw_none = true;
                } else if (!is_separator_text(tok.text)) {
                    diags.add(i, Severity::Recoverable, "unexpected text inside payload");
                }
                ++i;
                continue;
            }
            diags.add(i, Severity::Recoverable, "unexpected marker inside payload");
            ++i;
        }
        if (!payload_closed && i >= n) {
            diags.add(n == 0 ? 0 : n - 1, Severity::Recoverable, "sequence truncated inside payload");
        }

        // Assemble the record.
        PredictionRecord rec;
        rec.phrase = std::move(phrase);
        rec.kind = expected;
        if (expected == PayloadKind::Polygon) {
            std::size_t usable = scan.bins.size() - scan.bins.size() % 2;
            if (usable != scan.bins.size()) {
                diags.add(scan.positions.back(), Severity::Recoverable,
                          "odd polygon coordinate dropped");
            }
            if (usable >= 8) {
                QuantGeometry geom;
                geom.bins.assign(scan.bins.begin(), scan.bins.begin() + usable);
                geom.span_begin = scan.positions.front();
                geom.span_end = scan.positions[usable - 1] + 1;
                rec.geometries.push_back(std::move(geom));
            } else if (usable > 0) {
                diags.add(scan.positions.front(), Severity::Recoverable,
                          "polygon with fewer than 4 vertices dropped");
            }
        } else {
            const std::size_t gs = group_size_for(expected);
            rec.geometries = chunk_groups(scan, gs);
            if (scan.bins.size() % gs != 0) {
                diags.add(scan.positions.back(), Severity::Recoverable,
                          "trailing incomplete group dropped");
            }
        }

        if (rec.geometries.empty()) {
            if (scan.saw_none) {
                rec.absent = true;
            } else {
                diags.add(i == 0 ? 0 : i - 1, Severity::Recoverable,
                          "payload with no usable geometry; record dropped");
                continue;
            }
        } else if (scan.saw_none) {
            diags.add(i == 0 ? 0 : i - 1, Severity::Recoverable,
                      "absent marker alongside coordinates; marker ignored");
        }
        result.records.push_back(std::move(rec));
    }

    result.diagnostics = diags.take();
    return result;
}

void enforce_strict(const ParseResult& result) {
    for (const ParseDiagnostic& d : result.diagnostics) {
        throw InvalidRecordError("strict parse failed at token " + std::to_string(d.position) +
                                 ": " + d.message);
    }
}

} // namespace

ParseResult parse(const TokenSeq& seq, PayloadKind expected, ParseMode mode) {
    ParseResult result = expected == PayloadKind::KeypointJson
                             ? parse_keypoint_json(seq, ParseMode::Lenient)
                             : parse_blocks(seq, expected);
    if (mode == ParseMode::Strict) enforce_strict(result);
    return result;
}

ParseResult parse_text(const std::string& raw, PayloadKind expected, ParseMode mode) {
    return parse(lex(raw), expected, mode);
}

ParseResult parse_keypoint_json(const TokenSeq& seq, ParseMode mode) {
    ParseResult result;
    DiagnosticSink diags;

    // Rewrite coordinate-token runs into JSON arrays, render the rest as-is.
    std::string text;
    std::size_t i = 0;
    while (i < seq.size()) {
        if (seq[i].kind == TokenKind::Coord) {
            text += "[";
            bool first = true;
            while (i < seq.size() && seq[i].kind == TokenKind::Coord) {
                if (!first) text += ", ";
                text += std::to_string(seq[i].bin);
                first = false;
                ++i;
            }
            text += "]";
            continue;
        }
        text += render_token(seq[i]);
        ++i;
    }

    nlohmann::ordered_json doc = nlohmann::ordered_json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        diags.add(0, Severity::Fatal, "keypoint payload is not a parseable JSON object");
        result.diagnostics = diags.take();
        if (mode == ParseMode::Strict) enforce_strict(result);
        return result;
    }

    auto read_bin_array = [](const nlohmann::ordered_json& node, std::size_t want,
                             std::vector<Bin>* out) {
        if (!node.is_array() || node.size() != want) return false;
        for (const auto& v : node) {
            if (!v.is_number_integer()) return false;
            auto value = v.get<std::int64_t>();
            if (value < 0 || value >= kNumBins) return false;
            out->push_back(Bin(static_cast<int>(value)));
        }
        return true;
    };

    std::size_t ordinal = 0;
    for (const auto& [name, body] : doc.items()) {
        const std::size_t pos = ordinal++;
        if (!body.is_object() || !body.contains("box") || !body.contains("keypoints")) {
            diags.add(pos, Severity::Recoverable,
                      "instance \"" + name + "\" missing box or keypoints; skipped");
            continue;
        }
        QuantGeometry box;
        if (!read_bin_array(body["box"], 4, &box.bins)) {
            diags.add(pos, Severity::Recoverable,
                      "instance \"" + name + "\" box is not 4 coordinate bins; skipped");
            continue;
        }
        const auto& kps = body["keypoints"];
        if (!kps.is_object()) {
            diags.add(pos, Severity::Recoverable,
                      "instance \"" + name + "\" keypoints is not an object; skipped");
            continue;
        }
        PredictionRecord rec;
        rec.phrase = name;
        rec.kind = PayloadKind::KeypointJson;
        rec.geometries.push_back(std::move(box));
        bool kp_issue = false;
        for (const auto& [kp_name, kp_val] : kps.items()) {
            std::vector<Bin> pt;
            if (!read_bin_array(kp_val, 2, &pt)) {
                kp_issue = true;
                continue;
            }
            rec.keypoints.push_back(NamedKeypoint{kp_name, pt[0], pt[1]});
        }
        if (kp_issue) {
            diags.add(pos, Severity::Recoverable,
                      "instance \"" + name + "\" has malformed keypoints; those entries skipped");
        }
        result.records.push_back(std::move(rec));
    }

    result.diagnostics = diags.take();
    if (mode == ParseMode::Strict) enforce_strict(result);
    return result;
}

} // namespace tokdet
