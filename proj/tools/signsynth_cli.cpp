#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "signsynth/signsynth.hpp"

namespace fs = std::filesystem;
using namespace signsynth;

namespace {

struct FilterBgArgs {
    std::string index_file;
    std::string images_root = ".";
    std::string out_manifest;
    std::string standardize_dir;
    int canvas = 1500;
    int min_width = 400;
    int min_height = 600;
    std::vector<std::string> exclude;
    bool no_exclusions = false;
};

int run_filter_bg(const FilterBgArgs& a) {
    FilterPolicy policy;
    policy.min_width = a.min_width;
    policy.min_height = a.min_height;
    if (a.no_exclusions)
        policy.excluded_categories.clear();
    else if (!a.exclude.empty())
        policy.excluded_categories = {a.exclude.begin(), a.exclude.end()};

    const auto records = parse_annotation_index_file(a.index_file);
    const auto result = filter_backgrounds(records, policy);

    BackgroundManifest manifest;
    manifest.canvas_side = a.canvas;
    manifest.policy = policy;
    for (const auto& [rec, reason] : result.rejected)
        manifest.rejected_by_reason[to_string(reason)]++;

    if (!a.standardize_dir.empty()) {
        fs::create_directories(a.standardize_dir);
        manifest.standardized = true;
        for (const auto& rec : result.accepted) {
            const auto src = fs::path(a.images_root) / rec.file_path;
            ImageBuffer img = load_image(src.string());
            img = standardize_background(img, CanvasSpec{a.canvas});
            const auto dst = fs::path(a.standardize_dir) /
                             (fs::path(rec.file_path).stem().string() + ".png");
            save_png(img, dst.string());
            manifest.image_paths.push_back(fs::absolute(dst).string());
        }
    } else {
        for (const auto& rec : result.accepted)
            manifest.image_paths.push_back(
                fs::absolute(fs::path(a.images_root) / rec.file_path).string());
    }
    write_background_manifest(manifest, a.out_manifest);

    std::cout << "accepted " << result.accepted.size() << "\n";
    std::cout << "rejected " << result.rejected.size() << "\n";
    for (const auto& [reason, count] : manifest.rejected_by_reason)
        std::cout << "  " << reason << " " << count << "\n";
    return 0;
}

struct GenerateArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string templates_dir;
    std::string class_list;
    std::string backgrounds;
    std::string out_dir;
    int n = -1;
    long long seed = -1;
    int workers = 1;
};

int run_generate(const GenerateArgs& a) {
    GenerationParams params;
    if (!a.config.empty())
        params = load_params_file(a.config);
    for (const auto& kv : a.overrides)
        apply_override(params, kv);
    if (a.n >= 0)
        params.num_samples = a.n;
    if (a.seed >= 0)
        params.master_seed = static_cast<uint64_t>(a.seed);
    validate_params(params);

    const std::string class_list =
        a.class_list.empty() ? (fs::path(a.templates_dir) / "classes.txt").string()
                             : a.class_list;
    const TemplateSet templates = load_template_set(a.templates_dir, class_list);
    const BackgroundManifest manifest = read_background_manifest(a.backgrounds);

    const auto t0 = std::chrono::steady_clock::now();
    const DatasetManifest dm =
        generate_dataset(params, manifest, templates, a.out_dir, a.workers);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    long total = 0;
    for (const long c : dm.per_class_counts)
        total += c;
    std::cout << "generated " << params.num_samples << " samples, " << total
              << " sign instances in " << std::fixed << std::setprecision(1) << secs << "s\n";
    for (size_t i = 0; i < dm.class_names.size(); ++i)
        std::cout << "  " << dm.class_names[i] << " " << dm.per_class_counts[i] << "\n";
    if (dm.dropped_placements > 0)
        std::cout << "  (dropped placements: " << dm.dropped_placements << ")\n";
    return 0;
}

struct NoiseBgArgs {
    std::string out_dir;
    int count = 1;
    int side = 1500;
    long long seed = 0;
};

int run_noise_bg(const NoiseBgArgs& a) {
    fs::create_directories(a.out_dir);
    BackgroundManifest manifest;
    manifest.canvas_side = a.side;
    manifest.standardized = true;
    manifest.policy.excluded_categories.clear();
    manifest.policy.min_width = 0;
    manifest.policy.min_height = 0;
    for (int i = 0; i < a.count; ++i) {
        const ImageBuffer img = synth_noise_background(
            CanvasSpec{a.side}, mix_pair(static_cast<uint64_t>(a.seed), static_cast<uint64_t>(i)));
        char name[32];
        std::snprintf(name, sizeof name, "noise_%06d.png", i);
        const auto path = fs::path(a.out_dir) / name;
        save_png(img, path.string());
        manifest.image_paths.push_back(fs::absolute(path).string());
    }
    write_background_manifest(manifest, (fs::path(a.out_dir) / "manifest.json").string());
    std::cout << "wrote " << a.count << " noise backgrounds (side " << a.side << ")\n";
    return 0;
}

struct AugmentArgs {
    std::string gt_file;
    std::string images_root = ".";
    std::string out_dir;
    std::string config;
    std::vector<std::string> overrides;
    int copies = 1;
    long long seed = 0;
};

int run_augment(const AugmentArgs& a) {
    GenerationParams params;
    if (!a.config.empty())
        params = load_params_file(a.config);
    for (const auto& kv : a.overrides)
        apply_override(params, kv);
    validate_params(params);

    const GroundTruthIndex gt = read_ground_truth(a.gt_file);
    fs::create_directories(a.out_dir);

    std::vector<SampleMeta> metas;
    int out_index = 0;
    for (size_t i = 0; i < gt.images.size(); ++i) {
        const auto& entry = gt.images[i];
        const ImageBuffer img =
            load_image((fs::path(a.images_root) / entry.file_name).string());
        for (int copy = 0; copy < a.copies; ++copy) {
            Rng rng(mix_pair(mix_pair(static_cast<uint64_t>(a.seed), i),
                             static_cast<uint64_t>(copy)));
            AnnotatedSample s = augment_real(img, entry.boxes, rng, params);
            s.sample_index = out_index++;
            save_png(s.image, (fs::path(a.out_dir) / image_file_name(s.sample_index)).string());
            metas.push_back({s.sample_index, s.image.width, s.image.height, s.annotations});
        }
    }
    write_annotation_file(metas, gt.class_names,
                          (fs::path(a.out_dir) / "annotations.json").string());
    std::cout << "augmented " << gt.images.size() << " images x" << a.copies << "\n";
    return 0;
}

struct EvalArgs {
    std::string gt_file;
    std::string det_file;
    double iou_threshold = 0.5;
    std::string out_report;
    std::string pr_csv;
};

int run_eval(const EvalArgs& a) {
    const GroundTruthIndex gt = read_ground_truth(a.gt_file);
    const std::vector<Detection> dets = read_detections(a.det_file);
    const EvalReport report = mean_average_precision(gt, dets, a.iou_threshold);
    if (!a.out_report.empty())
        write_eval_report(report, a.out_report);
    if (!a.pr_csv.empty())
        export_pr_plot_data(report, a.pr_csv);
    std::printf("mAP %.4f\n", report.map);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"signsynth: synthesize annotated traffic-sign detection datasets "
                 "and score detections (VOC-2012 mAP)"};
    app.require_subcommand(1);

    FilterBgArgs fb;
    auto* filter_bg = app.add_subcommand(
        "filter-bg", "Parse a COCO-style index, filter backgrounds, write a manifest");
    filter_bg->add_option("--index", fb.index_file, "COCO-style annotation index JSON")
        ->required();
    filter_bg->add_option("--images-root", fb.images_root, "Directory holding the images");
    filter_bg->add_option("--out", fb.out_manifest, "Output manifest path")->required();
    filter_bg->add_option("--standardize-dir", fb.standardize_dir,
                          "Also scale+crop accepted images to the canvas and store them here");
    filter_bg->add_option("--canvas", fb.canvas, "Square canvas side in px (default 1500)");
    filter_bg->add_option("--min-width", fb.min_width, "Minimum image width (default 400)");
    filter_bg->add_option("--min-height", fb.min_height, "Minimum image height (default 600)");
    filter_bg->add_option("--exclude", fb.exclude,
                          "Excluded category name (repeatable; replaces the default list)");
    filter_bg->add_flag("--no-exclusions", fb.no_exclusions,
                        "Accept every category (full-corpus mode)");

    GenerateArgs gen;
    auto* generate =
        app.add_subcommand("generate", "Synthesize a training dataset from templates");
    generate->add_option("--config", gen.config, "Generation params JSON");
    generate->add_option("--set", gen.overrides, "Override a config key: key=value (repeatable)");
    generate->add_option("--templates", gen.templates_dir, "Template image directory")
        ->required();
    generate->add_option("--class-list", gen.class_list,
                         "Class list file (default <templates>/classes.txt)");
    generate->add_option("--backgrounds", gen.backgrounds, "Background manifest JSON")
        ->required();
    generate->add_option("--out", gen.out_dir, "Output dataset directory")->required();
    generate->add_option("--n", gen.n, "Number of samples (overrides config num_samples)");
    generate->add_option("--seed", gen.seed, "Master seed (overrides config master_seed)");
    generate->add_option("--workers", gen.workers, "Worker thread count (default 1)");

    NoiseBgArgs nb;
    auto* noise_bg =
        app.add_subcommand("noise-bg", "Synthesize uniform-noise background images");
    noise_bg->add_option("--out", nb.out_dir, "Output directory")->required();
    noise_bg->add_option("--count", nb.count, "Number of images (default 1)");
    noise_bg->add_option("--side", nb.side, "Canvas side in px (default 1500)");
    noise_bg->add_option("--seed", nb.seed, "Seed (default 0)");

    AugmentArgs aug;
    auto* augment = app.add_subcommand(
        "augment", "Brightness/contrast/blur augmentation of a real annotated set");
    augment->add_option("--gt", aug.gt_file, "Annotation file of the real set")->required();
    augment->add_option("--images-root", aug.images_root, "Directory holding the images");
    augment->add_option("--out", aug.out_dir, "Output directory")->required();
    augment->add_option("--config", aug.config, "Params JSON (uses contrast/brightness/blur)");
    augment->add_option("--set", aug.overrides, "Override a config key: key=value");
    augment->add_option("--copies", aug.copies, "Augmented copies per image (default 1)");
    augment->add_option("--seed", aug.seed, "Seed (default 0)");

    EvalArgs ev;
    auto* eval = app.add_subcommand(
        "eval", "Score detections against ground truth (precision/recall, AP, mAP)");
    eval->add_option("--gt", ev.gt_file, "Ground-truth annotation file")->required();
    eval->add_option("--detections", ev.det_file, "Detections JSON array")->required();
    eval->add_option("--iou", ev.iou_threshold, "IoU threshold (default 0.5)");
    eval->add_option("--out", ev.out_report, "Eval report JSON output path");
    eval->add_option("--pr-csv", ev.pr_csv, "Precision-recall plot data CSV output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (filter_bg->parsed())
            return run_filter_bg(fb);
        if (generate->parsed())
            return run_generate(gen);
        if (noise_bg->parsed())
            return run_noise_bg(nb);
        if (augment->parsed())
            return run_augment(aug);
        if (eval->parsed())
            return run_eval(ev);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValueError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
