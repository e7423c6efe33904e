#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "signsynth/core.hpp"
#include "signsynth/image_io.hpp"

namespace signsynth {

/// One scored prediction, as produced by an external detector.
struct Detection {
    std::string image_id;
    BoundingBox box;
    ClassId class_id = 0;
    double confidence = 0;
};

struct GroundTruthIndex {
    struct ImageEntry {
        std::string image_id;
        std::string file_name;
        int width = 0;
        int height = 0;
        std::vector<std::pair<BoundingBox, ClassId>> boxes;
    };
    std::vector<std::string> class_names;  // index == ClassId
    std::vector<ImageEntry> images;        // file order
    std::map<std::string, size_t> by_id;

    const ImageEntry* find(const std::string& image_id) const {
        auto it = by_id.find(image_id);
        return it == by_id.end() ? nullptr : &images[it->second];
    }
};

inline std::string image_file_name(int sample_index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08d.png", sample_index);
    return buf;
}

namespace detail {

inline double round4(double v) { return std::round(v * 1e4) / 1e4; }

inline std::string json_id_string(const nlohmann::json& v, const std::string& where) {
    if (v.is_string())
        return v.get<std::string>();
    if (v.is_number_integer())
        return std::to_string(v.get<long long>());
    throw SchemaError(where + ": id is neither string nor integer");
}

}  // namespace detail

/// Per-image metadata handed to the annotation-file writer. The generator
/// streams these; write_dataset collects them from in-memory samples.
struct SampleMeta {
    int sample_index = 0;
    int width = 0;
    int height = 0;
    std::vector<std::pair<BoundingBox, ClassId>> annotations;
};

/// COCO-style annotation file: images / annotations / categories, bbox as
/// [x,y,w,h], 0-based category ids, floats fixed to 4 decimals. Ordering is
/// by sample_index then placement order, so the bytes are reproducible.
inline void write_annotation_file(std::vector<SampleMeta> metas,
                                  const std::vector<std::string>& class_names,
                                  const std::string& path) {
    std::sort(metas.begin(), metas.end(),
              [](const SampleMeta& a, const SampleMeta& b) { return a.sample_index < b.sample_index; });
    nlohmann::ordered_json root;
    root["images"] = nlohmann::json::array();
    root["annotations"] = nlohmann::json::array();
    root["categories"] = nlohmann::json::array();
    int ann_id = 1;
    for (const auto& m : metas) {
        root["images"].push_back({{"id", m.sample_index + 1},
                                  {"file_name", image_file_name(m.sample_index)},
                                  {"width", m.width},
                                  {"height", m.height}});
        for (const auto& [box, cls] : m.annotations) {
            root["annotations"].push_back(
                {{"id", ann_id++},
                 {"image_id", m.sample_index + 1},
                 {"category_id", cls},
                 {"bbox", {detail::round4(box.x), detail::round4(box.y),
                           detail::round4(box.width), detail::round4(box.height)}},
                 {"area", detail::round4(box.area())},
                 {"iscrowd", 0}});
        }
    }
    for (size_t i = 0; i < class_names.size(); ++i)
        root["categories"].push_back({{"id", static_cast<int>(i)}, {"name", class_names[i]}});
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write annotation file: " + path);
    out << root.dump(2) << "\n";
    if (!out)
        throw IoError("failed writing annotation file: " + path);
}

/// Writes `{sample_index:08}.png` plus one annotation file for the whole
/// set. Samples need .image, .annotations and .sample_index members.
/// Returns the annotation file path.
template <typename SampleRange>
std::string write_dataset(const SampleRange& samples, const std::vector<std::string>& class_names,
                          const std::string& output_dir) {
    std::filesystem::create_directories(output_dir);
    std::vector<SampleMeta> metas;
    for (const auto& s : samples) {
        const auto png = std::filesystem::path(output_dir) / image_file_name(s.sample_index);
        save_png(s.image, png.string());
        metas.push_back({s.sample_index, s.image.width, s.image.height, s.annotations});
    }
    const auto ann_path = (std::filesystem::path(output_dir) / "annotations.json").string();
    write_annotation_file(std::move(metas), class_names, ann_path);
    return ann_path;
}

namespace detail {

inline GroundTruthIndex parse_ground_truth(const nlohmann::json& root) {
    GroundTruthIndex idx;
    const auto& cats = root.at("categories");
    std::vector<std::string> names(cats.size());
    std::vector<bool> seen(cats.size(), false);
    for (size_t i = 0; i < cats.size(); ++i) {
        const auto& c = cats[i];
        if (!c.contains("id") || !c.contains("name"))
            throw SchemaError("annotation file: categories[" + std::to_string(i) +
                              "]: missing 'id' or 'name'");
        const long long id = c.at("id").get<long long>();
        if (id < 0 || id >= static_cast<long long>(cats.size()) || seen[static_cast<size_t>(id)])
            throw SchemaError("annotation file: categories[" + std::to_string(i) +
                              "]: category ids must be unique and 0-based contiguous");
        seen[static_cast<size_t>(id)] = true;
        names[static_cast<size_t>(id)] = c.at("name").get<std::string>();
    }
    idx.class_names = std::move(names);

    const auto& images = root.at("images");
    for (size_t i = 0; i < images.size(); ++i) {
        const auto& im = images[i];
        if (!im.contains("id"))
            throw SchemaError("annotation file: images[" + std::to_string(i) + "]: missing 'id'");
        GroundTruthIndex::ImageEntry entry;
        entry.image_id = detail::json_id_string(im.at("id"), "images[" + std::to_string(i) + "]");
        entry.file_name = im.value("file_name", "");
        if (!im.contains("width") || !im.contains("height"))
            throw SchemaError("annotation file: images[" + std::to_string(i) +
                              "]: missing 'width'/'height'");
        entry.width = im.at("width").get<int>();
        entry.height = im.at("height").get<int>();
        if (entry.width <= 0 || entry.height <= 0)
            throw SchemaError("annotation file: images[" + std::to_string(i) +
                              "]: non-positive dimensions");
        if (idx.by_id.count(entry.image_id))
            throw SchemaError("annotation file: duplicate image id " + entry.image_id);
        idx.by_id[entry.image_id] = idx.images.size();
        idx.images.push_back(std::move(entry));
    }

    const auto& anns = root.at("annotations");
    for (size_t i = 0; i < anns.size(); ++i) {
        const auto& a = anns[i];
        const std::string where = "annotations[" + std::to_string(i) + "]";
        for (const char* key : {"image_id", "category_id", "bbox"})
            if (!a.contains(key))
                throw SchemaError("annotation file: " + where + ": missing '" + key + "'");
        const std::string img_id = detail::json_id_string(a.at("image_id"), where);
        auto it = idx.by_id.find(img_id);
        if (it == idx.by_id.end())
            throw SchemaError("annotation file: " + where + ": unknown image_id " + img_id);
        const long long cid = a.at("category_id").get<long long>();
        if (cid < 0 || cid >= static_cast<long long>(idx.class_names.size()))
            throw SchemaError("annotation file: " + where + ": unknown category_id " +
                              std::to_string(cid));
        const auto& bb = a.at("bbox");
        if (!bb.is_array() || bb.size() != 4)
            throw SchemaError("annotation file: " + where + ".bbox: expected [x,y,w,h]");
        BoundingBox box{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                        bb[3].get<double>()};
        auto& entry = idx.images[it->second];
        if (!box.valid())
            throw SchemaError("annotation file: " + where + ": invalid box on image " + img_id);
        if (box.x < 0 || box.y < 0 || box.right() > entry.width || box.bottom() > entry.height)
            throw SchemaError("annotation file: " + where + ": box out of bounds on image " +
                              img_id);
        entry.boxes.emplace_back(box, static_cast<ClassId>(cid));
    }
    return idx;
}

}  // namespace detail

/// Reads the schema written by write_dataset (also used for real datasets
/// converted to it). Boxes are validated against the declared image size.
inline GroundTruthIndex read_ground_truth(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open annotation file: " + path);
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("annotation file: invalid JSON: ") + e.what());
    }
    for (const char* key : {"images", "annotations", "categories"})
        if (!root.contains(key) || !root.at(key).is_array())
            throw SchemaError(std::string("annotation file: missing '") + key + "' array");
    // wrong value types surface as schema errors, not raw json exceptions
    try {
        return detail::parse_ground_truth(root);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("annotation file: malformed value: ") + e.what());
    }
}

/// JSON array of {image_id, bbox:[x,y,w,h], category_id, score}. File order
/// is preserved; scores outside [0,1] are rejected.
inline std::vector<Detection> read_detections(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open detections file: " + path);
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("detections file: invalid JSON: ") + e.what());
    }
    if (!root.is_array())
        throw SchemaError("detections file: top level must be an array");
    std::vector<Detection> dets;
    for (size_t i = 0; i < root.size(); ++i) {
        const auto& d = root[i];
        const std::string where = "detections[" + std::to_string(i) + "]";
        for (const char* key : {"image_id", "bbox", "category_id", "score"})
            if (!d.contains(key))
                throw SchemaError(where + ": missing '" + key + "'");
        Detection det;
        det.image_id = detail::json_id_string(d.at("image_id"), where);
        const auto& bb = d.at("bbox");
        if (!bb.is_array() || bb.size() != 4)
            throw SchemaError(where + ".bbox: expected [x,y,w,h]");
        try {
            det.box = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                       bb[3].get<double>()};
            det.class_id = d.at("category_id").get<int>();
            det.confidence = d.at("score").get<double>();
        } catch (const nlohmann::json::exception&) {
            throw SchemaError(where + ": malformed value");
        }
        if (!det.box.valid())
            throw SchemaError(where + ": invalid box");
        if (det.class_id < 0)
            throw SchemaError(where + ": negative category_id");
        if (det.confidence < 0 || det.confidence > 1)
            throw SchemaError(where + ": score " + std::to_string(det.confidence) +
                              " outside [0,1]");
        dets.push_back(std::move(det));
    }
    return dets;
}

}  // namespace signsynth
