#include "tokdet/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tokdet/errors.hpp"

namespace tokdet {

namespace {

using nlohmann::json;

std::string read_whole_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw LoadError("read failure on file: " + path);
    return buf.str();
}

std::optional<std::string> id_to_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    return std::nullopt;
}

double require_number(const json& v, const std::string& where) {
    if (!v.is_number()) throw LoadError(where + ": expected a number");
    double d = v.get<double>();
    if (!std::isfinite(d)) throw LoadError(where + ": non-finite number");
    return d;
}

const json& require_key(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw LoadError(where + ": missing \"" + key + "\"");
    return *it;
}

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

} // namespace

GroundTruthSet GroundTruthSet::load_file(const std::string& path) {
    return load_json_text(read_whole_file(path));
}

GroundTruthSet GroundTruthSet::load_json_text(const std::string& text) {
    json root = json::parse(text, nullptr, false);
    if (root.is_discarded()) throw LoadError("ground truth is not valid JSON");
    if (!root.is_object()) throw LoadError("ground truth root must be a JSON object");

    GroundTruthSet gt;

    const json& images = require_key(root, "images", "ground truth");
    if (!images.is_array()) throw LoadError("\"images\" must be an array");
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string where = "images[" + std::to_string(i) + "]";
        const json& entry = images[i];
        if (!entry.is_object()) throw LoadError(where + ": expected an object");
        auto id = id_to_string(require_key(entry, "id", where));
        if (!id) throw LoadError(where + ": id must be an integer or a string");
        GtImage image;
        image.id = *id;
        image.width = require_number(require_key(entry, "width", where), where + ".width");
        image.height = require_number(require_key(entry, "height", where), where + ".height");
        if (image.width <= 0.0 || image.height <= 0.0) {
            throw LoadError(where + ": width and height must be positive");
        }
        if (gt.image_index_.count(image.id) != 0) {
            throw LoadError(where + ": duplicate image id \"" + image.id + "\"");
        }
        gt.image_index_[image.id] = gt.images_.size();
        gt.images_.push_back(std::move(image));
    }

    const json& categories = require_key(root, "categories", "ground truth");
    if (!categories.is_array()) throw LoadError("\"categories\" must be an array");
    std::map<std::string, int> name_to_id;
    for (std::size_t i = 0; i < categories.size(); ++i) {
        const std::string where = "categories[" + std::to_string(i) + "]";
        const json& entry = categories[i];
        if (!entry.is_object()) throw LoadError(where + ": expected an object");
        const json& id_v = require_key(entry, "id", where);
        if (!id_v.is_number_integer()) throw LoadError(where + ": id must be an integer");
        GtCategory cat;
        cat.id = id_v.get<int>();
        const json& name_v = require_key(entry, "name", where);
        if (!name_v.is_string() || name_v.get<std::string>().empty()) {
            throw LoadError(where + ": name must be a non-empty string");
        }
        cat.name = name_v.get<std::string>();
        if (auto it = entry.find("keypoints"); it != entry.end()) {
            if (!it->is_array()) throw LoadError(where + ": \"keypoints\" must be an array");
            for (const json& kp : *it) {
                if (!kp.is_string()) throw LoadError(where + ": keypoint names must be strings");
                cat.keypoint_names.push_back(kp.get<std::string>());
            }
        }
        if (gt.categories_.count(cat.id) != 0) {
            throw LoadError(where + ": duplicate category id " + std::to_string(cat.id));
        }
        if (name_to_id.count(cat.name) != 0) {
            throw LoadError(where + ": duplicate category name \"" + cat.name + "\"");
        }
        name_to_id[cat.name] = cat.id;
        gt.categories_[cat.id] = std::move(cat);
    }

    const json& annotations = require_key(root, "annotations", "ground truth");
    if (!annotations.is_array()) throw LoadError("\"annotations\" must be an array");
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const std::string where = "annotations[" + std::to_string(i) + "]";
        const json& entry = annotations[i];
        if (!entry.is_object()) throw LoadError(where + ": expected an object");

        GtAnnotation ann;
        auto image_id = id_to_string(require_key(entry, "image_id", where));
        if (!image_id) throw LoadError(where + ": image_id must be an integer or a string");
        ann.image_id = *image_id;
        auto image_it = gt.image_index_.find(ann.image_id);
        if (image_it == gt.image_index_.end()) {
            throw LoadError(where + ": unknown image_id \"" + ann.image_id + "\"");
        }
        const GtImage& image = gt.images_[image_it->second];

        const json& cat_v = require_key(entry, "category_id", where);
        if (!cat_v.is_number_integer()) throw LoadError(where + ": category_id must be an integer");
        ann.category_id = cat_v.get<int>();
        auto cat_it = gt.categories_.find(ann.category_id);
        if (cat_it == gt.categories_.end()) {
            throw LoadError(where + ": unknown category_id " + std::to_string(ann.category_id));
        }

        const json& bbox = require_key(entry, "bbox", where);
        if (!bbox.is_array() || bbox.size() != 4) {
            throw LoadError(where + ": bbox must be [x, y, w, h]");
        }
        double bx = require_number(bbox[0], where + ".bbox[0]");
        double by = require_number(bbox[1], where + ".bbox[1]");
        double bw = require_number(bbox[2], where + ".bbox[2]");
        double bh = require_number(bbox[3], where + ".bbox[3]");
        if (bw < 0.0 || bh < 0.0) throw LoadError(where + ": bbox w and h must be >= 0");
        ann.box.x0 = clamp(bx, 0.0, image.width);
        ann.box.y0 = clamp(by, 0.0, image.height);
        ann.box.x1 = clamp(bx + bw, 0.0, image.width);
        ann.box.y1 = clamp(by + bh, 0.0, image.height);

        if (auto it = entry.find("segmentation"); it != entry.end()) {
            if (!it->is_array() || it->empty()) {
                throw LoadError(where + ": segmentation must be a non-empty array");
            }
            // COCO wraps each polygon ring in its own array; a flat number
            // list is accepted too. Only the first ring is used.
            const json& ring = (*it)[0].is_array() ? (*it)[0] : *it;
            if (ring.size() < 6 || ring.size() % 2 != 0) {
                throw LoadError(where + ": segmentation needs an even number (>= 6) of values");
            }
            for (std::size_t k = 0; k + 1 < ring.size(); k += 2) {
                Point p;
                p.x = clamp(require_number(ring[k], where + ".segmentation"), 0.0, image.width);
                p.y = clamp(require_number(ring[k + 1], where + ".segmentation"), 0.0,
                            image.height);
                ann.polygon.push_back(p);
            }
        }

        if (auto it = entry.find("keypoints"); it != entry.end()) {
            if (!it->is_array() || it->size() % 3 != 0) {
                throw LoadError(where + ": keypoints must be [x, y, v] triplets");
            }
            const std::vector<std::string>& names = cat_it->second.keypoint_names;
            if (names.empty()) {
                throw LoadError(where + ": category \"" + cat_it->second.name +
                                "\" declares no keypoint schema");
            }
            if (it->size() != names.size() * 3) {
                throw LoadError(where + ": expected " + std::to_string(names.size()) +
                                " keypoint triplets, got " + std::to_string(it->size() / 3));
            }
            for (std::size_t k = 0; k < names.size(); ++k) {
                Keypoint kp;
                kp.name = names[k];
                kp.point.x = require_number((*it)[3 * k], where + ".keypoints");
                kp.point.y = require_number((*it)[3 * k + 1], where + ".keypoints");
                kp.visible = require_number((*it)[3 * k + 2], where + ".keypoints") > 0.0;
                ann.keypoints.push_back(std::move(kp));
            }
        }

        if (auto it = entry.find("count"); it != entry.end()) {
            if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
                throw LoadError(where + ": count must be a non-negative integer");
            }
            ann.count = it->get<std::int64_t>();
        }

        gt.per_image_[ann.image_id].push_back(gt.annotations_.size());
        gt.annotations_.push_back(std::move(ann));
    }

    if (auto it = root.find("oks_k"); it != root.end()) {
        if (!it->is_object()) throw LoadError("\"oks_k\" must be an object");
        for (auto& [name, value] : it->items()) {
            double k = require_number(value, "oks_k." + name);
            if (k <= 0.0) throw LoadError("oks_k." + name + ": must be positive");
            gt.oks_.per_name[name] = k;
        }
    }

    return gt;
}

bool GroundTruthSet::has_image(const std::string& id) const {
    return image_index_.count(id) != 0;
}

const GtImage& GroundTruthSet::image(const std::string& id) const {
    auto it = image_index_.find(id);
    if (it == image_index_.end()) throw LoadError("unknown image id \"" + id + "\"");
    return images_[it->second];
}

const std::string& GroundTruthSet::category_name(int id) const {
    auto it = categories_.find(id);
    if (it == categories_.end()) throw LoadError("unknown category id " + std::to_string(id));
    return it->second.name;
}

const std::vector<std::size_t>&
GroundTruthSet::annotations_for(const std::string& image_id) const {
    static const std::vector<std::size_t> kEmpty;
    if (!has_image(image_id)) throw LoadError("unknown image id \"" + image_id + "\"");
    auto it = per_image_.find(image_id);
    return it == per_image_.end() ? kEmpty : it->second;
}

const Mask& GroundTruthSet::mask(std::size_t annotation_index) const {
    if (annotation_index >= annotations_.size()) {
        throw InvalidInputError("annotation index out of range");
    }
    std::lock_guard<std::mutex> lock(*mask_mutex_);
    auto cached = mask_cache_.find(annotation_index);
    if (cached != mask_cache_.end()) return cached->second;

    const GtAnnotation& ann = annotations_[annotation_index];
    const GtImage& img = image(ann.image_id);
    int w = static_cast<int>(std::lround(img.width));
    int h = static_cast<int>(std::lround(img.height));
    Polygon poly = ann.polygon;
    if (poly.empty()) {
        poly = {Point{ann.box.x0, ann.box.y0}, Point{ann.box.x1, ann.box.y0},
                Point{ann.box.x1, ann.box.y1}, Point{ann.box.x0, ann.box.y1}};
    }
    auto [it, inserted] = mask_cache_.emplace(annotation_index, rasterize(poly, w, h));
    return it->second;
}

std::vector<LabeledBox> GroundTruthSet::labeled_boxes(const std::string& image_id) const {
    std::vector<LabeledBox> out;
    for (std::size_t idx : annotations_for(image_id)) {
        const GtAnnotation& ann = annotations_[idx];
        out.push_back(LabeledBox{ann.box, category_name(ann.category_id)});
    }
    return out;
}

std::vector<LabeledMask> GroundTruthSet::labeled_masks(const std::string& image_id) const {
    std::vector<LabeledMask> out;
    for (std::size_t idx : annotations_for(image_id)) {
        const GtAnnotation& ann = annotations_[idx];
        out.push_back(LabeledMask{&mask(idx), category_name(ann.category_id)});
    }
    return out;
}

std::vector<KeypointInstance>
GroundTruthSet::keypoint_instances(const std::string& image_id) const {
    std::vector<KeypointInstance> out;
    for (std::size_t idx : annotations_for(image_id)) {
        const GtAnnotation& ann = annotations_[idx];
        if (ann.keypoints.empty()) continue;
        out.push_back(KeypointInstance{ann.box, ann.keypoints});
    }
    return out;
}

std::map<std::string, std::int64_t> GroundTruthSet::counts_per_image() const {
    std::map<std::string, std::int64_t> counts;
    for (const GtImage& img : images_) counts[img.id] = 0;
    for (const GtAnnotation& ann : annotations_) {
        counts[ann.image_id] += ann.count.value_or(1);
    }
    return counts;
}

namespace {

// Append one parsed chunk to an image's accumulated predictions, shifting
// token positions past what is already stored so spans and diagnostic
// positions stay valid against the merged sequence.
void append_parsed(ImagePredictions& dst, TokenSeq seq, ParseResult parsed) {
    std::size_t offset = dst.seq.size();
    for (PredictionRecord& rec : parsed.records) {
        for (QuantGeometry& g : rec.geometries) {
            g.span_begin += offset;
            g.span_end += offset;
        }
        dst.records.push_back(std::move(rec));
    }
    for (ParseDiagnostic& d : parsed.diagnostics) {
        d.position += offset;
        dst.diagnostics.push_back(std::move(d));
    }
    dst.seq.insert(dst.seq.end(), std::make_move_iterator(seq.begin()),
                   std::make_move_iterator(seq.end()));
}

struct ConfidenceTally {
    std::int64_t boxes = 0;
    std::int64_t with_confidence = 0;
};

void load_raw_lines(const std::string& content, const GroundTruthSet& gt, PayloadKind kind,
                    PredictionSet& out, std::map<std::string, std::size_t>& by_image) {
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            out.warnings.push_back("line " + std::to_string(line_no) +
                                   ": missing TAB between image id and sequence");
            continue;
        }
        std::string image_id = line.substr(0, tab);
        if (!gt.has_image(image_id)) {
            out.warnings.push_back("line " + std::to_string(line_no) + ": unknown image id \"" +
                                   image_id + "\"");
            continue;
        }
        TokenSeq seq = lex(line.substr(tab + 1));
        ParseResult parsed = parse(seq, kind);

        auto [it, inserted] = by_image.emplace(image_id, out.images.size());
        if (inserted) {
            out.images.push_back(ImagePredictions{image_id, {}, {}, {}, {}});
        } else {
            out.warnings.push_back("line " + std::to_string(line_no) + ": image id \"" +
                                   image_id + "\" appears more than once; entries merged");
        }
        append_parsed(out.images[it->second], std::move(seq), std::move(parsed));
    }
}

std::optional<Bin> bin_from_json(const json& v) {
    if (!v.is_number_integer()) return std::nullopt;
    std::int64_t raw = v.get<std::int64_t>();
    if (raw < 0 || raw >= kNumBins) return std::nullopt;
    return Bin(static_cast<int>(raw));
}

bool read_bin_array(const json& arr, std::vector<Bin>& out) {
    if (!arr.is_array()) return false;
    for (const json& v : arr) {
        auto bin = bin_from_json(v);
        if (!bin) return false;
        out.push_back(*bin);
    }
    return true;
}

void load_json_entries(const json& root, const GroundTruthSet& gt, PayloadKind kind,
                       PredictionSet& out, std::map<std::string, std::size_t>& by_image,
                       ConfidenceTally& tally) {
    for (std::size_t i = 0; i < root.size(); ++i) {
        const std::string where = "entry " + std::to_string(i);
        const json& entry = root[i];
        if (!entry.is_object()) {
            out.warnings.push_back(where + ": expected an object");
            continue;
        }
        auto id_it = entry.find("image_id");
        std::optional<std::string> image_id =
            id_it == entry.end() ? std::nullopt : id_to_string(*id_it);
        if (!image_id) {
            out.warnings.push_back(where + ": missing or malformed image_id");
            continue;
        }
        if (!gt.has_image(*image_id)) {
            out.warnings.push_back(where + ": unknown image id \"" + *image_id + "\"");
            continue;
        }
        auto [img_it, inserted] = by_image.emplace(*image_id, out.images.size());
        if (inserted) {
            out.images.push_back(ImagePredictions{*image_id, {}, {}, {}, {}});
        } else {
            out.warnings.push_back(where + ": image id \"" + *image_id +
                                   "\" appears more than once; entries merged");
        }
        ImagePredictions& dst = out.images[img_it->second];

        if (auto seq_it = entry.find("sequence"); seq_it != entry.end()) {
            if (!seq_it->is_string()) {
                out.warnings.push_back(where + ": \"sequence\" must be a string");
                continue;
            }
            TokenSeq seq = lex(seq_it->get<std::string>());
            ParseResult parsed = parse(seq, kind);
            for (const PredictionRecord& rec : parsed.records) {
                if (rec.kind == PayloadKind::Box) {
                    tally.boxes += static_cast<std::int64_t>(rec.geometries.size());
                }
            }
            append_parsed(dst, std::move(seq), std::move(parsed));
            continue;
        }

        auto recs_it = entry.find("records");
        if (recs_it == entry.end() || !recs_it->is_array()) {
            out.warnings.push_back(where + ": needs either \"sequence\" or \"records\"");
            continue;
        }
        for (std::size_t r = 0; r < recs_it->size(); ++r) {
            const std::string rwhere = where + " record " + std::to_string(r);
            const json& rec_v = (*recs_it)[r];
            if (!rec_v.is_object() || !rec_v.contains("phrase") ||
                !rec_v["phrase"].is_string()) {
                out.warnings.push_back(rwhere + ": missing string \"phrase\"");
                continue;
            }
            PredictionRecord rec;
            rec.phrase = rec_v["phrase"].get<std::string>();
            rec.kind = kind;
            if (rec_v.value("absent", false)) {
                rec.absent = true;
                dst.records.push_back(std::move(rec));
                continue;
            }

            if (kind == PayloadKind::KeypointJson) {
                QuantGeometry box;
                if (!rec_v.contains("box") || !read_bin_array(rec_v["box"], box.bins) ||
                    box.bins.size() != 4) {
                    out.warnings.push_back(rwhere + ": \"box\" must be 4 bins in 0..999");
                    continue;
                }
                if (!rec_v.contains("keypoints") || !rec_v["keypoints"].is_object()) {
                    out.warnings.push_back(rwhere + ": missing \"keypoints\" object");
                    continue;
                }
                rec.geometries.push_back(std::move(box));
                bool ok = true;
                for (auto& [name, value] : rec_v["keypoints"].items()) {
                    std::vector<Bin> bins;
                    if (!read_bin_array(value, bins) || bins.size() != 2) {
                        out.warnings.push_back(rwhere + ": keypoint \"" + name +
                                               "\" must be 2 bins in 0..999");
                        ok = false;
                        break;
                    }
                    rec.keypoints.push_back(NamedKeypoint{name, bins[0], bins[1]});
                }
                if (ok) dst.records.push_back(std::move(rec));
                continue;
            }

            auto groups_it = rec_v.find("groups");
            if (groups_it == rec_v.end() || !groups_it->is_array()) {
                out.warnings.push_back(rwhere + ": missing \"groups\" array");
                continue;
            }
            const json* confidences = nullptr;
            if (auto c_it = rec_v.find("confidences"); c_it != rec_v.end()) {
                if (!c_it->is_array() || c_it->size() != groups_it->size()) {
                    out.warnings.push_back(rwhere +
                                           ": \"confidences\" must parallel \"groups\"");
                } else {
                    confidences = &*c_it;
                }
            }
            std::size_t expected = kind == PayloadKind::Box ? 4 : 2;
            for (std::size_t g = 0; g < groups_it->size(); ++g) {
                QuantGeometry geom;
                if (!read_bin_array((*groups_it)[g], geom.bins)) {
                    out.warnings.push_back(rwhere + ": group " + std::to_string(g) +
                                           " has a value outside 0..999");
                    continue;
                }
                bool arity_ok = kind == PayloadKind::Polygon
                                    ? geom.bins.size() >= 8 && geom.bins.size() % 2 == 0
                                    : geom.bins.size() == expected;
                if (!arity_ok) {
                    out.warnings.push_back(rwhere + ": group " + std::to_string(g) +
                                           " has the wrong number of values");
                    continue;
                }
                rec.geometries.push_back(std::move(geom));
                if (kind == PayloadKind::Box) {
                    ++tally.boxes;
                    if (confidences != nullptr) {
                        const json& c = (*confidences)[g];
                        if (c.is_number()) {
                            double conf = c.get<double>();
                            if (conf < 0.0 || conf > 1.0) {
                                out.warnings.push_back(rwhere + ": confidence " +
                                                       std::to_string(conf) +
                                                       " clamped into [0, 1]");
                                conf = clamp(conf, 0.0, 1.0);
                            }
                            dst.confidences.push_back(conf);
                            ++tally.with_confidence;
                        } else {
                            out.warnings.push_back(rwhere + ": non-numeric confidence ignored");
                        }
                    }
                }
            }
            if (rec.geometries.empty()) {
                out.warnings.push_back(rwhere + ": no usable groups; record dropped");
                continue;
            }
            dst.records.push_back(std::move(rec));
        }
    }
}

} // namespace

PredictionSet parse_predictions_text(const std::string& content, const GroundTruthSet& gt,
                                     PayloadKind kind) {
    PredictionSet out;
    out.kind = kind;
    std::map<std::string, std::size_t> by_image;

    std::size_t first = content.find_first_not_of(" \t\r\n");
    bool looks_json = first != std::string::npos && content[first] == '[';
    if (!looks_json) {
        load_raw_lines(content, gt, kind, out, by_image);
        return out;
    }

    json root = json::parse(content, nullptr, false);
    if (root.is_discarded() || !root.is_array()) {
        out.warnings.push_back("prediction file looks like JSON but does not parse as an array");
        return out;
    }
    ConfidenceTally tally;
    load_json_entries(root, gt, kind, out, by_image, tally);
    out.has_confidence = tally.boxes > 0 && tally.with_confidence == tally.boxes;
    return out;
}

PredictionSet load_predictions(const std::string& path, const GroundTruthSet& gt,
                               PayloadKind kind) {
    return parse_predictions_text(read_whole_file(path), gt, kind);
}

std::vector<LabeledBox> to_labeled_boxes(const std::vector<PredictionRecord>& records,
                                         double width, double height) {
    std::vector<LabeledBox> out;
    for (const PredictionRecord& rec : records) {
        if (rec.absent) continue;
        for (const QuantGeometry& g : rec.geometries) {
            if (g.bins.size() != 4) continue;
            out.push_back(LabeledBox{Box{dequantize(g.bins[0], width), dequantize(g.bins[1], height),
                                         dequantize(g.bins[2], width), dequantize(g.bins[3], height)},
                                     rec.phrase});
        }
    }
    return out;
}

std::vector<LabeledPoint> to_labeled_points(const std::vector<PredictionRecord>& records,
                                            double width, double height) {
    std::vector<LabeledPoint> out;
    for (const PredictionRecord& rec : records) {
        if (rec.absent) continue;
        for (const QuantGeometry& g : rec.geometries) {
            if (g.bins.size() != 2) continue;
            out.push_back(LabeledPoint{
                Point{dequantize(g.bins[0], width), dequantize(g.bins[1], height)}, rec.phrase});
        }
    }
    return out;
}

std::vector<KeypointInstance>
to_keypoint_instances(const std::vector<PredictionRecord>& records, double width,
                      double height) {
    std::vector<KeypointInstance> out;
    for (const PredictionRecord& rec : records) {
        if (rec.absent || rec.geometries.size() != 1 || rec.geometries[0].bins.size() != 4) {
            continue;
        }
        const std::vector<Bin>& b = rec.geometries[0].bins;
        KeypointInstance inst;
        inst.box = Box{dequantize(b[0], width), dequantize(b[1], height),
                       dequantize(b[2], width), dequantize(b[3], height)};
        for (const NamedKeypoint& kp : rec.keypoints) {
            inst.keypoints.push_back(Keypoint{
                kp.name, Point{dequantize(kp.x, width), dequantize(kp.y, height)}, true});
        }
        out.push_back(std::move(inst));
    }
    return out;
}

namespace {

json threshold_rows(const std::vector<ThresholdEval>& rows, const char* threshold_key) {
    json arr = json::array();
    for (const ThresholdEval& row : rows) {
        arr.push_back(json{{threshold_key, row.threshold},
                           {"recall", row.recall},
                           {"precision", row.precision},
                           {"f1", row.f1}});
    }
    return arr;
}

} // namespace

json to_json(const DetectionEvalResult& result) {
    return json{{"per_threshold", threshold_rows(result.per_threshold, "iou_threshold")},
                {"f1_at_50", result.f1_at_50},
                {"f1_at_95", result.f1_at_95},
                {"f1_miou", result.f1_miou}};
}

json to_json(const PrF1& result) {
    return json{{"recall", result.recall}, {"precision", result.precision}, {"f1", result.f1}};
}

json to_json(const KeypointEvalResult& result) {
    return json{{"per_threshold", threshold_rows(result.per_threshold, "oks_threshold")},
                {"f1_at_50", result.f1_at_50},
                {"f1_at_95", result.f1_at_95},
                {"f1_mean", result.f1_mean}};
}

json to_json(const SweepResult& result) {
    json curve = json::array();
    for (const SweepPoint& point : result.curve) {
        curve.push_back(json{{"confidence_threshold", point.threshold},
                             {"f1_at_50", point.eval.f1_at_50},
                             {"f1_miou", point.eval.f1_miou}});
    }
    return json{{"best_threshold", result.best_threshold},
                {"best_f1", result.best_f1},
                {"curve", std::move(curve)}};
}

json to_json(const RewardReport& report) {
    json per_gt = json::array();
    for (const GtMatch& m : report.per_gt) {
        json row{{"credit", m.credit}};
        if (m.pred_index) {
            row["pred_index"] = *m.pred_index;
        } else {
            row["pred_index"] = nullptr;
        }
        per_gt.push_back(std::move(row));
    }
    return json{{"recall", report.recall},
                {"precision", report.precision},
                {"reward", report.reward},
                {"per_gt", std::move(per_gt)}};
}

json to_json(const AblationReport& report) {
    return json{{"before", to_json(report.before)},
                {"after", to_json(report.after)},
                {"removal_ratio", report.removal_ratio},
                {"flagged_images", report.flagged_images},
                {"total_images", report.total_images},
                {"removed_predictions", report.removed_predictions},
                {"total_predictions", report.total_predictions}};
}

json to_json(const TokenEfficiency& eff) {
    return json{{"tokens_per_box", eff.tokens_per_box},
                {"total_tokens", eff.total_tokens},
                {"coord_tokens", eff.coord_tokens},
                {"separator_tokens", eff.separator_tokens},
                {"box_count", eff.box_count}};
}

json to_json(const ParseDiagnostic& diag) {
    return json{{"position", diag.position},
                {"severity", diag.severity == Severity::Fatal ? "fatal" : "recoverable"},
                {"message", diag.message}};
}

json to_json(const PredictionRecord& record) {
    const char* kind = nullptr;
    switch (record.kind) {
    case PayloadKind::Box: kind = "box"; break;
    case PayloadKind::Point: kind = "point"; break;
    case PayloadKind::Polygon: kind = "polygon"; break;
    case PayloadKind::KeypointJson: kind = "keypoint_json"; break;
    }
    json groups = json::array();
    for (const QuantGeometry& g : record.geometries) {
        json bins = json::array();
        for (Bin b : g.bins) bins.push_back(b.value());
        groups.push_back(std::move(bins));
    }
    json out{{"phrase", record.phrase},
             {"kind", kind},
             {"absent", record.absent},
             {"groups", std::move(groups)}};
    if (record.kind == PayloadKind::KeypointJson) {
        json kps = json::object();
        for (const NamedKeypoint& kp : record.keypoints) {
            kps[kp.name] = json::array({kp.x.value(), kp.y.value()});
        }
        out["keypoints"] = std::move(kps);
    }
    return out;
}

namespace {

std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

} // namespace

std::string detection_table(const DetectionEvalResult& result) {
    std::ostringstream out;
    out << "IoU     Recall  Prec    F1\n";
    for (const ThresholdEval& row : result.per_threshold) {
        out << fixed3(row.threshold) << "   " << fixed3(row.recall) << "   "
            << fixed3(row.precision) << "   " << fixed3(row.f1) << "\n";
    }
    out << "F1@0.5 " << fixed3(result.f1_at_50) << "  F1@0.95 " << fixed3(result.f1_at_95)
        << "  F1@mIoU " << fixed3(result.f1_miou) << "\n";
    return out.str();
}

std::string ablation_table(const AblationReport& report) {
    std::ostringstream out;
    out << "          F1@0.5   F1@mIoU  Remov.\n";
    out << "before    " << fixed3(report.before.f1_at_50) << "    " << fixed3(report.before.f1_miou)
        << "    -\n";
    out << "after     " << fixed3(report.after.f1_at_50) << "    " << fixed3(report.after.f1_miou)
        << "    " << fixed3(report.removal_ratio * 100.0) << "%\n";
    return out.str();
}

} // namespace tokdet
