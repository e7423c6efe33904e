#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "signsynth/annotations.hpp"
#include "signsynth/background.hpp"
#include "signsynth/compositor.hpp"
#include "signsynth/core.hpp"
#include "signsynth/rng.hpp"
#include "signsynth/template_store.hpp"

namespace signsynth {

struct GroupConfig {
    int rows = 1;
    int cols = 2;
    int spacing = 6;  // px between adjacent cells
};

enum class BlendMode { Naive, Poisson };

/// Every random range and toggle of the pipeline. Field names match the
/// JSON config keys one for one.
struct GenerationParams {
    double contrast_range[2] = {0.6, 1.4};      // alpha ~ U(a, b)
    double brightness_range[2] = {-40, 40};     // beta ~ U(c, d)
    double blur_floor = 1.5;                    // e
    double blur_slope = 0.01;                   // f
    double scale_range[2] = {20, 200};          // sign longest side, px
    int max_signs_per_image = 4;
    std::vector<GroupConfig> group_configs = {{1, 2, 6}, {1, 3, 6}, {2, 1, 6},
                                              {2, 2, 6}, {2, 4, 6}, {3, 1, 6}};
    double group_probability = 0.3;
    double jitter_amplitude = 8;
    double fade_width_pct = 0.02;  // of the sign's longest side
    double brightness_constant = 128;
    double yaw_limit_deg = 35;
    double pitch_limit_deg = 35;
    double roll_limit_deg = 8;
    double placement_margin = 4;
    int max_placement_attempts = 50;
    bool enable_blur = true;
    bool enable_brightness_adjust = true;
    bool enable_geometric = true;
    bool enable_background_augmentation = true;
    bool enable_blend = true;
    bool enable_histogram_noise = true;
    bool enable_grouping = true;
    BlendMode blend_mode = BlendMode::Naive;
    uint64_t master_seed = 0;
    int num_samples = 0;
    int canvas_side = 1500;
    double poisson_tolerance = 0.1;
};

inline void validate_params(const GenerationParams& p) {
    auto fail = [](const std::string& msg) { throw SchemaError("params: " + msg); };
    if (!(p.contrast_range[0] > 0) || p.contrast_range[0] > p.contrast_range[1])
        fail("contrast_range must satisfy 0 < a <= b");
    if (p.brightness_range[0] > p.brightness_range[1])
        fail("brightness_range must satisfy c <= d");
    if (p.blur_floor < 0 || p.blur_slope < 0)
        fail("blur_floor and blur_slope must be >= 0");
    if (p.scale_range[0] < 2 || p.scale_range[0] > p.scale_range[1])
        fail("scale_range must satisfy 2 <= min <= max");
    if (p.max_signs_per_image < 1)
        fail("max_signs_per_image must be >= 1");
    if (p.group_probability < 0 || p.group_probability > 1)
        fail("group_probability must be in [0,1]");
    if (p.jitter_amplitude < 0 || p.fade_width_pct < 0)
        fail("jitter_amplitude and fade_width_pct must be >= 0");
    if (p.yaw_limit_deg < 0 || p.pitch_limit_deg < 0 || p.roll_limit_deg < 0)
        fail("rotation limits must be >= 0");
    if (p.yaw_limit_deg > 60 || p.pitch_limit_deg > 60)
        fail("yaw/pitch limits above 60 degrees give degenerate homographies");
    if (p.placement_margin < 0)
        fail("placement_margin must be >= 0");
    if (p.max_placement_attempts < 1)
        fail("max_placement_attempts must be >= 1");
    if (p.num_samples < 0)
        fail("num_samples must be >= 0");
    if (p.canvas_side < 8)
        fail("canvas_side must be >= 8");
    if (p.poisson_tolerance <= 0)
        fail("poisson_tolerance must be > 0");
    const int cell = static_cast<int>(std::ceil(p.scale_range[1]));
    if (cell > p.canvas_side - 2)
        fail("max scale does not fit the canvas (1 px border reserved)");
    if (p.enable_grouping && p.group_probability > 0 && p.group_configs.empty())
        fail("group_probability > 0 but group_configs is empty");
    for (const auto& g : p.group_configs) {
        if (g.rows < 1 || g.cols < 1 || g.spacing < 0)
            fail("group config rows/cols must be >= 1, spacing >= 0");
        const int total_w = g.cols * cell + (g.cols - 1) * g.spacing;
        const int total_h = g.rows * cell + (g.rows - 1) * g.spacing;
        if (total_w > p.canvas_side - 2 || total_h > p.canvas_side - 2)
            fail("group config " + std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                 " does not fit the canvas at max scale");
    }
}

namespace detail {

inline void set_param_field(GenerationParams& p, const std::string& key,
                            const nlohmann::json& v) {
    try {
        if (key == "contrast_range") {
            p.contrast_range[0] = v.at(0).get<double>();
            p.contrast_range[1] = v.at(1).get<double>();
        } else if (key == "brightness_range") {
            p.brightness_range[0] = v.at(0).get<double>();
            p.brightness_range[1] = v.at(1).get<double>();
        } else if (key == "blur_floor") {
            p.blur_floor = v.get<double>();
        } else if (key == "blur_slope") {
            p.blur_slope = v.get<double>();
        } else if (key == "scale_range") {
            p.scale_range[0] = v.at(0).get<double>();
            p.scale_range[1] = v.at(1).get<double>();
        } else if (key == "max_signs_per_image") {
            p.max_signs_per_image = v.get<int>();
        } else if (key == "group_configs") {
            p.group_configs.clear();
            for (const auto& g : v)
                p.group_configs.push_back(
                    {g.at(0).get<int>(), g.at(1).get<int>(), g.at(2).get<int>()});
        } else if (key == "group_probability") {
            p.group_probability = v.get<double>();
        } else if (key == "jitter_amplitude") {
            p.jitter_amplitude = v.get<double>();
        } else if (key == "fade_width_pct") {
            p.fade_width_pct = v.get<double>();
        } else if (key == "brightness_constant") {
            p.brightness_constant = v.get<double>();
        } else if (key == "yaw_limit_deg") {
            p.yaw_limit_deg = v.get<double>();
        } else if (key == "pitch_limit_deg") {
            p.pitch_limit_deg = v.get<double>();
        } else if (key == "roll_limit_deg") {
            p.roll_limit_deg = v.get<double>();
        } else if (key == "placement_margin") {
            p.placement_margin = v.get<double>();
        } else if (key == "max_placement_attempts") {
            p.max_placement_attempts = v.get<int>();
        } else if (key == "enable_blur") {
            p.enable_blur = v.get<bool>();
        } else if (key == "enable_brightness_adjust") {
            p.enable_brightness_adjust = v.get<bool>();
        } else if (key == "enable_geometric") {
            p.enable_geometric = v.get<bool>();
        } else if (key == "enable_background_augmentation") {
            p.enable_background_augmentation = v.get<bool>();
        } else if (key == "enable_blend") {
            p.enable_blend = v.get<bool>();
        } else if (key == "enable_histogram_noise") {
            p.enable_histogram_noise = v.get<bool>();
        } else if (key == "enable_grouping") {
            p.enable_grouping = v.get<bool>();
        } else if (key == "blend_mode") {
            const auto s = v.get<std::string>();
            if (s == "naive")
                p.blend_mode = BlendMode::Naive;
            else if (s == "poisson")
                p.blend_mode = BlendMode::Poisson;
            else
                throw SchemaError("params: blend_mode must be 'naive' or 'poisson'");
        } else if (key == "master_seed") {
            p.master_seed = v.get<uint64_t>();
        } else if (key == "num_samples") {
            p.num_samples = v.get<int>();
        } else if (key == "canvas_side") {
            p.canvas_side = v.get<int>();
        } else if (key == "poisson_tolerance") {
            p.poisson_tolerance = v.get<double>();
        } else {
            throw SchemaError("params: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception&) {
        throw SchemaError("params: bad value for '" + key + "'");
    }
}

}  // namespace detail

inline GenerationParams params_from_json(const nlohmann::json& j) {
    if (!j.is_object())
        throw SchemaError("params: config root must be a JSON object");
    GenerationParams p;
    for (const auto& [key, value] : j.items())
        detail::set_param_field(p, key, value);
    validate_params(p);
    return p;
}

inline GenerationParams load_params_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("config: invalid JSON: ") + e.what());
    }
    return params_from_json(j);
}

/// Applies one "key=value" override; the value is parsed as JSON, falling
/// back to a bare string (so blend_mode=poisson works unquoted).
inline void apply_override(GenerationParams& p, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw SchemaError("override must look like key=value: '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    nlohmann::json v = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (v.is_discarded())
        v = raw;
    detail::set_param_field(p, key, v);
}

inline nlohmann::ordered_json params_to_json(const GenerationParams& p) {
    nlohmann::ordered_json j;
    j["contrast_range"] = {p.contrast_range[0], p.contrast_range[1]};
    j["brightness_range"] = {p.brightness_range[0], p.brightness_range[1]};
    j["blur_floor"] = p.blur_floor;
    j["blur_slope"] = p.blur_slope;
    j["scale_range"] = {p.scale_range[0], p.scale_range[1]};
    j["max_signs_per_image"] = p.max_signs_per_image;
    j["group_configs"] = nlohmann::ordered_json::array();
    for (const auto& g : p.group_configs)
        j["group_configs"].push_back({g.rows, g.cols, g.spacing});
    j["group_probability"] = p.group_probability;
    j["jitter_amplitude"] = p.jitter_amplitude;
    j["fade_width_pct"] = p.fade_width_pct;
    j["brightness_constant"] = p.brightness_constant;
    j["yaw_limit_deg"] = p.yaw_limit_deg;
    j["pitch_limit_deg"] = p.pitch_limit_deg;
    j["roll_limit_deg"] = p.roll_limit_deg;
    j["placement_margin"] = p.placement_margin;
    j["max_placement_attempts"] = p.max_placement_attempts;
    j["enable_blur"] = p.enable_blur;
    j["enable_brightness_adjust"] = p.enable_brightness_adjust;
    j["enable_geometric"] = p.enable_geometric;
    j["enable_background_augmentation"] = p.enable_background_augmentation;
    j["enable_blend"] = p.enable_blend;
    j["enable_histogram_noise"] = p.enable_histogram_noise;
    j["enable_grouping"] = p.enable_grouping;
    j["blend_mode"] = p.blend_mode == BlendMode::Poisson ? "poisson" : "naive";
    j["master_seed"] = p.master_seed;
    j["num_samples"] = p.num_samples;
    j["canvas_side"] = p.canvas_side;
    j["poisson_tolerance"] = p.poisson_tolerance;
    return j;
}

/// One planned sign: which class, how it is warped, and the reserved
/// ceil(scale)-sided square cell the warped tight box will be centered in.
struct Placement {
    ClassId class_id = 0;
    GeomParams geom;
    int cell_x = 0;
    int cell_y = 0;
    int cell_side = 0;
    int group_id = -1;  // -1: not grouped
};

struct LayoutPlan {
    std::vector<Placement> placements;
    int dropped = 0;  // placements abandoned after max_placement_attempts
};

/// Draws |K| ~ U{1..min(M, max_signs)}, optionally expands the first
/// placement into a grid group, and rejection-samples non-intersecting
/// cell positions (margin-dilated). Cells keep 1 px off the canvas border.
inline LayoutPlan sample_layout(Rng& rng, const GenerationParams& params, int class_count) {
    if (class_count < 1)
        throw ValueError("sample_layout: class_count must be >= 1");
    LayoutPlan plan;
    std::vector<BoundingBox> reserved;

    const int k_max = std::min(class_count, params.max_signs_per_image);
    const int k = rng.uniform_int(1, k_max);
    const double group_u = rng.uniform(0.0, 1.0);
    const bool grouped = params.enable_grouping && !params.group_configs.empty() &&
                         group_u < params.group_probability;

    auto draw_geom = [&](double scale) {
        GeomParams g;
        g.yaw_deg = rng.uniform(-params.yaw_limit_deg, params.yaw_limit_deg);
        g.pitch_deg = rng.uniform(-params.pitch_limit_deg, params.pitch_limit_deg);
        g.roll_deg = rng.uniform(-params.roll_limit_deg, params.roll_limit_deg);
        g.scale = scale;
        return g;
    };

    auto try_place = [&](int total_w, int total_h, int& out_x, int& out_y) {
        const int hi_x = params.canvas_side - total_w - 1;
        const int hi_y = params.canvas_side - total_h - 1;
        for (int attempt = 0; attempt < params.max_placement_attempts; ++attempt) {
            const int x = rng.uniform_int(1, hi_x);
            const int y = rng.uniform_int(1, hi_y);
            const BoundingBox cand{static_cast<double>(x), static_cast<double>(y),
                                   static_cast<double>(total_w), static_cast<double>(total_h)};
            bool conflict = false;
            for (const auto& r : reserved)
                if (intersects(cand, r, params.placement_margin)) {
                    conflict = true;
                    break;
                }
            if (!conflict) {
                reserved.push_back(cand);
                out_x = x;
                out_y = y;
                return true;
            }
        }
        return false;
    };

    for (int j = 0; j < k; ++j) {
        if (j == 0 && grouped) {
            const int cfg_idx =
                rng.uniform_int(0, static_cast<int>(params.group_configs.size()) - 1);
            const GroupConfig cfg = params.group_configs[cfg_idx];
            const double scale = rng.uniform(params.scale_range[0], params.scale_range[1]);
            const int cell = static_cast<int>(std::ceil(scale));
            std::vector<Placement> cells;
            for (int r = 0; r < cfg.rows; ++r)
                for (int c = 0; c < cfg.cols; ++c) {
                    Placement pl;
                    pl.class_id = static_cast<ClassId>(rng.uniform_int(0, class_count - 1));
                    pl.geom = draw_geom(scale);
                    pl.cell_side = cell;
                    pl.group_id = 0;
                    cells.push_back(pl);
                }
            const int total_w = cfg.cols * cell + (cfg.cols - 1) * cfg.spacing;
            const int total_h = cfg.rows * cell + (cfg.rows - 1) * cfg.spacing;
            int gx = 0, gy = 0;
            if (try_place(total_w, total_h, gx, gy)) {
                int i = 0;
                for (int r = 0; r < cfg.rows; ++r)
                    for (int c = 0; c < cfg.cols; ++c, ++i) {
                        cells[static_cast<size_t>(i)].cell_x = gx + c * (cell + cfg.spacing);
                        cells[static_cast<size_t>(i)].cell_y = gy + r * (cell + cfg.spacing);
                        plan.placements.push_back(cells[static_cast<size_t>(i)]);
                    }
            } else {
                plan.dropped++;
            }
            continue;
        }
        Placement pl;
        pl.class_id = static_cast<ClassId>(rng.uniform_int(0, class_count - 1));
        const double scale = rng.uniform(params.scale_range[0], params.scale_range[1]);
        pl.geom = draw_geom(scale);
        pl.cell_side = static_cast<int>(std::ceil(scale));
        if (try_place(pl.cell_side, pl.cell_side, pl.cell_x, pl.cell_y)) {
            plan.placements.push_back(pl);
        } else if (plan.placements.empty() && j == k - 1) {
            // an empty canvas always has room for a single sign; only
            // intersection can reject, so this retry terminates
            while (!try_place(pl.cell_side, pl.cell_side, pl.cell_x, pl.cell_y)) {
            }
            plan.placements.push_back(pl);
        } else {
            plan.dropped++;
        }
    }
    return plan;
}

struct PlacementProvenance {
    ClassId class_id = 0;
    double yaw = 0, pitch = 0, roll = 0, scale = 0;
    int cell_x = 0, cell_y = 0;
    int group_id = -1;
    bool poisson_converged = true;
};

struct Provenance {
    int background_index = 0;
    double alpha = 1, beta = 0;
    double sigma = 0, sigma_cap = 0;
    int dropped = 0;
    std::vector<PlacementProvenance> placements;
};

struct AnnotatedSample {
    ImageBuffer image;
    std::vector<std::pair<BoundingBox, ClassId>> annotations;
    int sample_index = 0;
    Provenance provenance;
};

namespace detail {

inline ImageBuffer to_rgb(ImageBuffer img) {
    if (img.channels == 3)
        return img;
    ImageBuffer out(img.width, img.height, 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(x, y, c) = img.at(x, y, c);
    return out;
}

inline double region_mean(const ImageBuffer& img, int x0, int y0, int w, int h) {
    double sum = 0;
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x)
            for (int c = 0; c < 3; ++c)
                sum += img.at(x, y, c);
    return sum / (static_cast<double>(w) * h * 3);
}

inline size_t poisson_interior_size(const WarpedTemplate& w) {
    size_t n = 0;
    const int tbx = static_cast<int>(w.tight_box.x), tby = static_cast<int>(w.tight_box.y);
    for (int y = 0; y < static_cast<int>(w.tight_box.height); ++y)
        for (int x = 0; x < static_cast<int>(w.tight_box.width); ++x)
            if (w.image.at(tbx + x, tby + y, 3) >= 128.f)
                ++n;
    return n;
}

}  // namespace detail

/// Loads one background by manifest index, standardizing to the canvas side
/// unless the manifest says the images already are.
inline ImageBuffer load_canvas(const BackgroundManifest& manifest, size_t index) {
    ImageBuffer img = detail::to_rgb(load_image(manifest.image_paths.at(index)));
    if (img.width == manifest.canvas_side && img.height == manifest.canvas_side)
        return img;
    return standardize_background(img, CanvasSpec{manifest.canvas_side});
}

/// Every scalar decision of one sample: which background, the photometric
/// draw, the layout. generate_sample consumes exactly these draws in this
/// order before any pixel work.
struct SamplePlan {
    int background_index = 0;
    double alpha = 1;
    double beta = 0;
    LayoutPlan layout;
};

inline SamplePlan plan_sample(int sample_index, const GenerationParams& params,
                              int background_count, int class_count,
                              Rng* continuation = nullptr) {
    Rng rng = derive_sample_rng(params.master_seed, static_cast<uint64_t>(sample_index));
    SamplePlan plan;
    plan.background_index = rng.uniform_int(0, background_count - 1);
    plan.alpha = rng.uniform(params.contrast_range[0], params.contrast_range[1]);
    plan.beta = rng.uniform(params.brightness_range[0], params.brightness_range[1]);
    plan.layout = sample_layout(rng, params, class_count);
    if (continuation)
        *continuation = rng;
    return plan;
}

/// Runs the full blending pipeline for one sample. Pure function of
/// (params, manifest, templates, sample_index): all scalar draws come from
/// the per-sample stream in a fixed order; jitter noise uses private
/// per-placement substreams. Toggling a step off consumes exactly the same
/// top-level draws as running it with identity parameters.
inline AnnotatedSample generate_sample(int sample_index, const GenerationParams& params,
                                       const BackgroundManifest& manifest,
                                       const TemplateSet& templates) {
    if (manifest.image_paths.empty())
        throw ValueError("generate_sample: background manifest is empty");
    if (templates.size() == 0)
        throw ValueError("generate_sample: template set is empty");
    if (manifest.canvas_side != params.canvas_side)
        throw SchemaError("generate_sample: manifest canvas_side " +
                          std::to_string(manifest.canvas_side) + " != params canvas_side " +
                          std::to_string(params.canvas_side));

    AnnotatedSample sample;
    sample.sample_index = sample_index;

    Rng rng(0);
    const SamplePlan plan =
        plan_sample(sample_index, params, static_cast<int>(manifest.image_paths.size()),
                    static_cast<int>(templates.size()), &rng);
    const double alpha = plan.alpha;
    const double beta = plan.beta;

    ImageBuffer canvas = load_canvas(manifest, static_cast<size_t>(plan.background_index));
    if (params.enable_background_augmentation)
        canvas = adjust_brightness_contrast(canvas, {alpha, beta});

    sample.provenance.background_index = plan.background_index;
    sample.provenance.alpha = alpha;
    sample.provenance.beta = beta;
    sample.provenance.dropped = plan.layout.dropped;

    for (size_t j = 0; j < plan.layout.placements.size(); ++j) {
        const Placement& pl = plan.layout.placements[j];
        const Template& tmpl = templates.by_class(pl.class_id);

        ImageBuffer timg = tmpl.image;
        if (params.enable_brightness_adjust)
            timg = adjust_brightness_contrast(timg, {alpha, 0.0});

        GeomParams geom = pl.geom;
        if (!params.enable_geometric)
            geom.yaw_deg = geom.pitch_deg = geom.roll_deg = 0;  // scale-only

        WarpedTemplate w = warp_template(timg, geom);
        const int tbw = static_cast<int>(w.tight_box.width);
        const int tbh = static_cast<int>(w.tight_box.height);
        const int pos_x = pl.cell_x + (pl.cell_side - tbw) / 2;
        const int pos_y = pl.cell_y + (pl.cell_side - tbh) / 2;

        const double mean = detail::region_mean(canvas, pos_x, pos_y, tbw, tbh);
        if (params.enable_blend)
            w = match_local_brightness(w, mean, params.brightness_constant);
        if (params.enable_histogram_noise) {
            Rng jr = derive_jitter_rng(params.master_seed, static_cast<uint64_t>(sample_index),
                                       static_cast<uint64_t>(j));
            w = apply_jitter(w, params.jitter_amplitude, jr);
        }
        if (params.enable_blend) {
            // pct 0 means no fade; otherwise at least 1 px
            const int fade_px =
                params.fade_width_pct <= 0.0
                    ? 0
                    : std::max(1, static_cast<int>(std::lround(params.fade_width_pct * geom.scale)));
            w = fade_borders(w, fade_px);
        }

        PlacementProvenance pp{pl.class_id, geom.yaw_deg,  geom.pitch_deg, geom.roll_deg,
                               geom.scale,  pl.cell_x,     pl.cell_y,      pl.group_id,
                               true};
        BoundingBox box;
        if (params.blend_mode == BlendMode::Naive) {
            auto [next, b] = alpha_composite(std::move(canvas), w, pos_x, pos_y);
            canvas = std::move(next);
            box = b;
        } else {
            const size_t interior = detail::poisson_interior_size(w);
            const int iters = std::max(
                1, static_cast<int>(10.0 * std::ceil(std::sqrt(static_cast<double>(interior)))));
            PoissonResult res =
                poisson_blend(std::move(canvas), w, pos_x, pos_y, params.poisson_tolerance, iters);
            canvas = std::move(res.image);
            box = res.box;
            pp.poisson_converged = res.converged;
        }
        sample.annotations.emplace_back(box, pl.class_id);
        sample.provenance.placements.push_back(pp);
    }

    double max_side = 0;
    for (const auto& [box, cls] : sample.annotations)
        max_side = std::max(max_side, std::max(box.width, box.height));
    const double sigma_cap = std::max(params.blur_floor, params.blur_slope * max_side);
    const double sigma = rng.uniform(0.0, sigma_cap);
    sample.provenance.sigma = sigma;
    sample.provenance.sigma_cap = sigma_cap;
    if (params.enable_blur)
        canvas = gaussian_blur(canvas, sigma);

    sample.image = std::move(canvas);
    return sample;
}

/// Simple real-image augmentation: brightness/contrast plus blur, boxes
/// untouched.
inline AnnotatedSample augment_real(const ImageBuffer& image,
                                    const std::vector<std::pair<BoundingBox, ClassId>>& annotations,
                                    Rng& rng, const GenerationParams& params) {
    const double alpha = rng.uniform(params.contrast_range[0], params.contrast_range[1]);
    const double beta = rng.uniform(params.brightness_range[0], params.brightness_range[1]);
    const double sigma = rng.uniform(0.0, params.blur_floor);
    AnnotatedSample out;
    out.image = gaussian_blur(adjust_brightness_contrast(image, {alpha, beta}), sigma);
    out.annotations = annotations;
    out.provenance.alpha = alpha;
    out.provenance.beta = beta;
    out.provenance.sigma = sigma;
    out.provenance.sigma_cap = params.blur_floor;
    return out;
}

struct DatasetManifest {
    GenerationParams params;
    std::vector<std::string> class_names;
    std::vector<long> per_class_counts;
    long dropped_placements = 0;
    std::string annotation_file;
};

inline void write_dataset_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::ordered_json j;
    j["num_samples"] = m.params.num_samples;
    j["master_seed"] = m.params.master_seed;
    j["params"] = params_to_json(m.params);
    j["class_names"] = m.class_names;
    j["per_class_counts"] = m.per_class_counts;
    j["dropped_placements"] = m.dropped_placements;
    j["annotation_file"] = std::filesystem::path(m.annotation_file).filename().string();
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write dataset manifest: " + path);
    out << j.dump(2) << "\n";
}

/// Generates params.num_samples samples across `workers` threads. Output is
/// byte-identical no matter the worker count: each sample is a pure
/// function of its index, and shared files are assembled after a sort.
/// A "_PARTIAL" marker is left behind if the run aborts.
inline DatasetManifest generate_dataset(const GenerationParams& params,
                                        const BackgroundManifest& manifest,
                                        const TemplateSet& templates,
                                        const std::string& output_dir, int workers = 1) {
    validate_params(params);
    std::error_code ec;
    std::filesystem::create_directories(output_dir, ec);
    if (ec)
        throw IoError("cannot create output dir: " + output_dir + ": " + ec.message());

    const int n = params.num_samples;
    const auto marker = std::filesystem::path(output_dir) / "_PARTIAL";
    std::ofstream(marker.string()) << "generation in progress\n";

    std::vector<SampleMeta> metas(static_cast<size_t>(n));
    std::vector<long> class_counts(templates.size(), 0);
    std::atomic<long> dropped{0};
    std::atomic<int> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::mutex count_mutex;

    auto work = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n)
                return;
            try {
                AnnotatedSample s = generate_sample(i, params, manifest, templates);
                const auto png = std::filesystem::path(output_dir) / image_file_name(i);
                save_png(s.image, png.string());
                metas[static_cast<size_t>(i)] = {i, s.image.width, s.image.height,
                                                 s.annotations};
                dropped += s.provenance.dropped;
                std::lock_guard<std::mutex> lk(count_mutex);
                for (const auto& [box, cls] : s.annotations)
                    class_counts[static_cast<size_t>(cls)]++;
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mutex);
                if (!first_error)
                    first_error = std::current_exception();
                next.store(n);
                return;
            }
        }
    };

    const int thread_count = std::max(1, std::min(workers, std::max(n, 1)));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t)
        pool.emplace_back(work);
    for (auto& t : pool)
        t.join();
    if (first_error)
        std::rethrow_exception(first_error);  // marker file stays behind

    const auto ann_path = (std::filesystem::path(output_dir) / "annotations.json").string();
    write_annotation_file(metas, templates.class_names, ann_path);

    DatasetManifest dm;
    dm.params = params;
    dm.class_names = templates.class_names;
    dm.per_class_counts = class_counts;
    dm.dropped_placements = dropped.load();
    dm.annotation_file = ann_path;
    write_dataset_manifest(dm, (std::filesystem::path(output_dir) / "manifest.json").string());
    std::filesystem::remove(marker, ec);
    return dm;
}

}  // namespace signsynth
