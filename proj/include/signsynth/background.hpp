#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "signsynth/core.hpp"
#include "signsynth/rng.hpp"

namespace signsynth {

struct BackgroundRecord {
    std::string image_id;
    std::string file_path;
    int width = 0;
    int height = 0;
    std::set<std::string> category_labels;
};

/// MS-COCO driving-domain categories, excluded by default so no real
/// traffic scene ends up as background.
inline const std::set<std::string>& default_excluded_categories() {
    static const std::set<std::string> cats = {
        "traffic light", "bicycle", "car",         "motorcycle", "bus",
        "truck",         "fire hydrant", "stop sign", "parking meter"};
    return cats;
}

struct FilterPolicy {
    std::set<std::string> excluded_categories = default_excluded_categories();
    int min_width = 400;
    int min_height = 600;
};

struct CanvasSpec {
    int side = 1500;
};

enum class RejectReason { ExcludedCategory, Undersized };

inline const char* to_string(RejectReason r) {
    return r == RejectReason::ExcludedCategory ? "excluded-category" : "undersized";
}

struct FilterResult {
    std::vector<BackgroundRecord> accepted;
    std::vector<std::pair<BackgroundRecord, RejectReason>> rejected;
};

namespace detail {

inline const nlohmann::json& require_array(const nlohmann::json& root, const char* key) {
    if (!root.contains(key))
        throw SchemaError(std::string("annotation index: missing '") + key + "' array");
    const auto& v = root.at(key);
    if (!v.is_array())
        throw SchemaError(std::string("annotation index: '") + key + "' is not an array");
    return v;
}

template <typename T>
T require_field(const nlohmann::json& obj, const char* array_name, size_t idx, const char* key) {
    if (!obj.contains(key))
        throw SchemaError(std::string("annotation index: ") + array_name + "[" +
                          std::to_string(idx) + "]: missing '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(std::string("annotation index: ") + array_name + "[" +
                          std::to_string(idx) + "]: bad '" + key + "'");
    }
}

inline std::string id_to_string(const nlohmann::json& v) {
    if (v.is_string())
        return v.get<std::string>();
    if (v.is_number_integer())
        return std::to_string(v.get<long long>());
    throw SchemaError("annotation index: id is neither string nor integer");
}

}  // namespace detail

/// Parses a COCO-style index (images / annotations / categories) into one
/// record per image. category_labels is the set of category names of all
/// annotations referencing the image.
inline std::vector<BackgroundRecord> parse_annotation_index(std::istream& in) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("annotation index: invalid JSON: ") + e.what());
    }
    const auto& images = detail::require_array(root, "images");
    const auto& annotations = detail::require_array(root, "annotations");
    const auto& categories = detail::require_array(root, "categories");

    std::map<std::string, std::string> cat_names;
    for (size_t i = 0; i < categories.size(); ++i) {
        const auto& c = categories[i];
        if (!c.contains("id"))
            throw SchemaError("annotation index: categories[" + std::to_string(i) + "]: missing 'id'");
        cat_names[detail::id_to_string(c.at("id"))] =
            detail::require_field<std::string>(c, "categories", i, "name");
    }

    std::vector<BackgroundRecord> records;
    std::map<std::string, size_t> index_of;
    for (size_t i = 0; i < images.size(); ++i) {
        const auto& im = images[i];
        if (!im.contains("id"))
            throw SchemaError("annotation index: images[" + std::to_string(i) + "]: missing 'id'");
        BackgroundRecord rec;
        rec.image_id = detail::id_to_string(im.at("id"));
        rec.file_path = detail::require_field<std::string>(im, "images", i, "file_name");
        rec.width = detail::require_field<int>(im, "images", i, "width");
        rec.height = detail::require_field<int>(im, "images", i, "height");
        if (rec.width <= 0 || rec.height <= 0)
            throw SchemaError("annotation index: images[" + std::to_string(i) +
                              "]: non-positive dimensions");
        if (!index_of.emplace(rec.image_id, records.size()).second)
            throw SchemaError("annotation index: duplicate image id " + rec.image_id);
        records.push_back(std::move(rec));
    }

    for (size_t i = 0; i < annotations.size(); ++i) {
        const auto& a = annotations[i];
        if (!a.contains("image_id"))
            throw SchemaError("annotation index: annotations[" + std::to_string(i) +
                              "]: missing 'image_id'");
        if (!a.contains("category_id"))
            throw SchemaError("annotation index: annotations[" + std::to_string(i) +
                              "]: missing 'category_id'");
        const std::string img_id = detail::id_to_string(a.at("image_id"));
        const std::string cat_id = detail::id_to_string(a.at("category_id"));
        auto it = index_of.find(img_id);
        if (it == index_of.end())
            throw SchemaError("annotation index: annotations[" + std::to_string(i) +
                              "]: unknown image_id " + img_id);
        auto cit = cat_names.find(cat_id);
        if (cit == cat_names.end())
            throw SchemaError("annotation index: annotations[" + std::to_string(i) +
                              "]: unknown category_id " + cat_id);
        records[it->second].category_labels.insert(cit->second);
    }
    return records;
}

inline std::vector<BackgroundRecord> parse_annotation_index_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open annotation index: " + path);
    return parse_annotation_index(in);
}

/// Accepts a record iff it carries no excluded category and meets both size
/// minima. Order-preserving; accepted + rejected partition the input.
inline FilterResult filter_backgrounds(const std::vector<BackgroundRecord>& records,
                                       const FilterPolicy& policy) {
    FilterResult res;
    for (const auto& rec : records) {
        bool excluded = false;
        for (const auto& label : rec.category_labels) {
            if (policy.excluded_categories.count(label)) {
                excluded = true;
                break;
            }
        }
        if (excluded)
            res.rejected.emplace_back(rec, RejectReason::ExcludedCategory);
        else if (rec.width < policy.min_width || rec.height < policy.min_height)
            res.rejected.emplace_back(rec, RejectReason::Undersized);
        else
            res.accepted.push_back(rec);
    }
    return res;
}

/// Uniformly scales so the shortest dimension equals spec.side, then crops
/// the centered square (offset floor((dim - side)/2)).
inline ImageBuffer standardize_background(const ImageBuffer& image, const CanvasSpec& spec) {
    if (image.width < 1 || image.height < 1)
        throw ValueError("standardize_background: empty image");
    const int short_dim = std::min(image.width, image.height);
    const double factor = static_cast<double>(spec.side) / short_dim;
    int new_w, new_h;
    if (image.width <= image.height) {
        new_w = spec.side;
        new_h = static_cast<int>(std::lround(image.height * factor));
    } else {
        new_h = spec.side;
        new_w = static_cast<int>(std::lround(image.width * factor));
    }
    ImageBuffer scaled = bilinear_resize(image, new_w, new_h);
    const int off_x = (new_w - spec.side) / 2;
    const int off_y = (new_h - spec.side) / 2;
    if (off_x == 0 && off_y == 0 && new_w == spec.side && new_h == spec.side)
        return scaled;
    ImageBuffer out(spec.side, spec.side, scaled.channels);
    for (int y = 0; y < spec.side; ++y)
        for (int x = 0; x < spec.side; ++x)
            for (int c = 0; c < scaled.channels; ++c)
                out.at(x, y, c) = scaled.at(x + off_x, y + off_y, c);
    return out;
}

/// Square RGB canvas of i.i.d. uniform {0..255} intensities. Same seed,
/// same bytes.
inline ImageBuffer synth_noise_background(const CanvasSpec& spec, uint64_t rng_seed) {
    Rng rng(rng_seed);
    ImageBuffer out(spec.side, spec.side, 3);
    for (auto& v : out.data)
        v = static_cast<float>(rng.uniform_int(0, 255));
    return out;
}

/// Background manifest: the filter stage's output, the generator's input.
struct BackgroundManifest {
    int canvas_side = 1500;
    bool standardized = false;  // true when images are already canvas-sized
    FilterPolicy policy;
    std::vector<std::string> image_paths;
    std::map<std::string, int> rejected_by_reason;
};

inline void write_background_manifest(const BackgroundManifest& m, const std::string& path) {
    nlohmann::ordered_json j;
    j["canvas_side"] = m.canvas_side;
    j["standardized"] = m.standardized;
    j["policy"] = {{"excluded_categories",
                    std::vector<std::string>(m.policy.excluded_categories.begin(),
                                             m.policy.excluded_categories.end())},
                   {"min_width", m.policy.min_width},
                   {"min_height", m.policy.min_height}};
    j["accepted_count"] = m.image_paths.size();
    j["rejected_by_reason"] = m.rejected_by_reason;
    j["images"] = m.image_paths;
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

inline BackgroundManifest read_background_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("manifest: invalid JSON: ") + e.what());
    }
    BackgroundManifest m;
    try {
        m.canvas_side = j.at("canvas_side").get<int>();
        m.standardized = j.at("standardized").get<bool>();
        const auto& pol = j.at("policy");
        m.policy.excluded_categories.clear();
        for (const auto& c : pol.at("excluded_categories"))
            m.policy.excluded_categories.insert(c.get<std::string>());
        m.policy.min_width = pol.at("min_width").get<int>();
        m.policy.min_height = pol.at("min_height").get<int>();
        if (j.contains("rejected_by_reason"))
            m.rejected_by_reason = j.at("rejected_by_reason").get<std::map<std::string, int>>();
        m.image_paths = j.at("images").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("manifest: ") + e.what());
    }
    // Relative image paths are taken relative to the manifest's directory.
    const auto base = std::filesystem::path(path).parent_path();
    for (auto& p : m.image_paths) {
        std::filesystem::path fp(p);
        if (fp.is_relative())
            p = (base / fp).string();
    }
    return m;
}

}  // namespace signsynth
