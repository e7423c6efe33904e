#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "signsynth/core.hpp"
#include "signsynth/image_io.hpp"
#include "signsynth/rng.hpp"

namespace signsynth {

/// One traffic-sign class's canonical image. The alpha channel is the sign
/// silhouette mask; it is never all-zero.
struct Template {
    ClassId class_id = 0;
    ImageBuffer image;  // always 4 channels
    std::string name;
};

struct TemplateSet {
    std::vector<Template> templates;     // index == ClassId, 0..M-1
    std::vector<std::string> class_names;

    size_t size() const { return templates.size(); }
    const Template& by_class(ClassId id) const { return templates.at(static_cast<size_t>(id)); }
};

namespace detail {

inline bool has_nonzero_alpha(const ImageBuffer& img) {
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (img.at(x, y, 3) > 0.f)
                return true;
    return false;
}

// Flat-background templates (legislation PDF exports) carry no alpha; mask
// out every pixel exactly matching the dominant corner color.
inline ImageBuffer auto_mask(const ImageBuffer& rgb) {
    ImageBuffer out(rgb.width, rgb.height, 4);
    const std::array<std::pair<int, int>, 4> corners = {
        {{0, 0}, {rgb.width - 1, 0}, {0, rgb.height - 1}, {rgb.width - 1, rgb.height - 1}}};
    std::array<std::array<float, 3>, 4> colors{};
    std::array<int, 4> counts{};
    for (size_t i = 0; i < 4; ++i)
        for (int c = 0; c < 3; ++c)
            colors[i][c] = rgb.at(corners[i].first, corners[i].second, c);
    for (size_t i = 0; i < 4; ++i)
        for (size_t j = 0; j < 4; ++j)
            if (colors[i] == colors[j])
                counts[i]++;
    size_t dominant = 0;
    for (size_t i = 1; i < 4; ++i)
        if (counts[i] > counts[dominant])
            dominant = i;
    const auto& key = colors[dominant];
    for (int y = 0; y < rgb.height; ++y)
        for (int x = 0; x < rgb.width; ++x) {
            bool match = true;
            for (int c = 0; c < 3; ++c) {
                out.at(x, y, c) = rgb.at(x, y, c);
                match = match && rgb.at(x, y, c) == key[c];
            }
            out.at(x, y, 3) = match ? 0.f : 255.f;
        }
    return out;
}

}  // namespace detail

/// Loads every class in `class_list_file` (lines of `name<TAB>file_name`)
/// from `directory`. ClassIds are assigned in lexicographic class-name
/// order, so the line order of the list file does not matter.
inline TemplateSet load_template_set(const std::string& directory,
                                     const std::string& class_list_file) {
    std::ifstream in(class_list_file);
    if (!in)
        throw IoError("cannot open class list: " + class_list_file);

    std::map<std::string, std::string> by_name;  // sorted -> contiguous ids
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
            throw SchemaError("class list line " + std::to_string(lineno) +
                              ": expected 'name<TAB>file_name'");
        const std::string name = line.substr(0, tab);
        const std::string file = line.substr(tab + 1);
        if (!by_name.emplace(name, file).second)
            throw SchemaError("class list: duplicate class '" + name + "'");
    }
    if (by_name.empty())
        throw SchemaError("class list is empty: at least one class is required");

    TemplateSet set;
    for (const auto& [name, file] : by_name) {
        const auto path = std::filesystem::path(directory) / file;
        ImageBuffer img;
        try {
            img = load_image(path.string());
        } catch (const IoError& e) {
            throw IoError("template for class '" + name + "': " + e.what());
        }
        if (img.channels == 3)
            img = detail::auto_mask(img);
        if (!detail::has_nonzero_alpha(img))
            throw SchemaError("template for class '" + name + "' is fully transparent");
        Template t;
        t.class_id = static_cast<ClassId>(set.templates.size());
        t.image = std::move(img);
        t.name = name;
        set.class_names.push_back(name);
        set.templates.push_back(std::move(t));
    }
    return set;
}

/// Uniform draw over classes.
inline const Template& sample_template(const TemplateSet& set, Rng& rng) {
    if (set.templates.empty())
        throw ValueError("sample_template: empty template set");
    return set.templates[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(set.templates.size()) - 1))];
}

}  // namespace signsynth
