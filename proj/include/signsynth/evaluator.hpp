#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "signsynth/annotations.hpp"
#include "signsynth/core.hpp"

namespace signsynth {

/// Per-class TP/FP labels in confidence rank order, plus ground-truth
/// counts. Confidence ties keep input file order (stable sort).
struct MatchResult {
    struct PerClass {
        int num_gt = 0;
        std::vector<uint8_t> tp_flags;  // rank order: 1 = TP, 0 = FP
    };
    double iou_threshold = 0.5;
    std::map<ClassId, PerClass> per_class;
};

/// PASCAL-VOC-2012-style greedy matching: per class, detections in
/// descending confidence; each matches the unmatched same-image ground
/// truth of highest IoU if that IoU clears the threshold, else counts FP.
inline MatchResult match_detections(const GroundTruthIndex& gt,
                                    const std::vector<Detection>& detections,
                                    double iou_threshold) {
    if (!(iou_threshold > 0) || iou_threshold > 1)
        throw ValueError("match_detections: iou_threshold must be in (0,1]");
    MatchResult result;
    result.iou_threshold = iou_threshold;

    const int num_classes = static_cast<int>(gt.class_names.size());
    for (int c = 0; c < num_classes; ++c)
        result.per_class[c] = {};
    for (const auto& img : gt.images)
        for (const auto& [box, cls] : img.boxes)
            result.per_class[cls].num_gt++;

    // gt consumption flags, per image, aligned with ImageEntry::boxes
    std::vector<std::vector<char>> used(gt.images.size());
    for (size_t i = 0; i < gt.images.size(); ++i)
        used[i].assign(gt.images[i].boxes.size(), 0);

    std::map<ClassId, std::vector<size_t>> dets_by_class;
    for (size_t i = 0; i < detections.size(); ++i) {
        const auto& d = detections[i];
        if (d.class_id < 0 || d.class_id >= num_classes)
            throw SchemaError("detection " + std::to_string(i) + ": unknown category_id " +
                              std::to_string(d.class_id));
        dets_by_class[d.class_id].push_back(i);
    }

    for (auto& [cls, indices] : dets_by_class) {
        std::stable_sort(indices.begin(), indices.end(), [&](size_t a, size_t b) {
            return detections[a].confidence > detections[b].confidence;
        });
        auto& pc = result.per_class[cls];
        for (const size_t di : indices) {
            const auto& det = detections[di];
            const auto it = gt.by_id.find(det.image_id);
            bool tp = false;
            if (it != gt.by_id.end()) {
                const auto& entry = gt.images[it->second];
                double best_iou = 0;
                int best = -1;
                for (size_t k = 0; k < entry.boxes.size(); ++k) {
                    if (entry.boxes[k].second != cls || used[it->second][k])
                        continue;
                    const double v = iou(det.box, entry.boxes[k].first);
                    if (v > best_iou) {
                        best_iou = v;
                        best = static_cast<int>(k);
                    }
                }
                if (best >= 0 && best_iou >= iou_threshold) {
                    used[it->second][static_cast<size_t>(best)] = 1;
                    tp = true;
                }
            }
            pc.tp_flags.push_back(tp ? 1 : 0);
        }
    }
    return result;
}

struct PRPoint {
    double recall = 0;
    double precision = 0;
};

struct PRCurve {
    ClassId class_id = 0;
    std::vector<PRPoint> points;  // one per detection rank
};

/// Point k is (TP_k / num_gt, TP_k / k); recall is non-decreasing.
inline PRCurve pr_curve(const MatchResult& m, ClassId class_id) {
    const auto it = m.per_class.find(class_id);
    if (it == m.per_class.end() || it->second.num_gt < 1)
        throw ValueError("pr_curve: class " + std::to_string(class_id) +
                         " has no ground truth");
    PRCurve curve;
    curve.class_id = class_id;
    int tp = 0;
    int rank = 0;
    for (const uint8_t flag : it->second.tp_flags) {
        ++rank;
        tp += flag;
        curve.points.push_back({static_cast<double>(tp) / it->second.num_gt,
                                static_cast<double>(tp) / rank});
    }
    return curve;
}

/// All-points interpolated AP: sum over distinct recall steps of
/// (r_k - r_{k-1}) * max precision among points with recall >= r_k.
inline double average_precision(const PRCurve& curve) {
    const auto& pts = curve.points;
    if (pts.empty())
        return 0.0;
    std::vector<double> suffix_max(pts.size());
    double run = 0;
    for (size_t i = pts.size(); i-- > 0;) {
        run = std::max(run, pts[i].precision);
        suffix_max[i] = run;
    }
    double ap = 0, prev_recall = 0;
    for (size_t i = 0; i < pts.size(); ++i) {
        if (pts[i].recall > prev_recall) {
            ap += (pts[i].recall - prev_recall) * suffix_max[i];
            prev_recall = pts[i].recall;
        }
    }
    return ap;
}

struct ClassEval {
    ClassId id = 0;
    std::string name;
    int num_gt = 0;
    int num_det = 0;
    int tp = 0;
    int fp = 0;
    double ap = 0;
    bool evaluated = false;  // false when num_gt == 0 (excluded from mAP)
};

struct EvalReport {
    double iou_threshold = 0.5;
    double map = 0;
    std::vector<ClassEval> classes;  // ascending class id
    std::vector<PRCurve> curves;     // evaluated classes only, same order
};

/// mAP = unweighted mean of AP over classes with ground truth; zero-gt
/// classes are excluded and flagged in the report.
inline EvalReport mean_average_precision(const GroundTruthIndex& gt,
                                         const std::vector<Detection>& detections,
                                         double iou_threshold) {
    const MatchResult matches = match_detections(gt, detections, iou_threshold);
    EvalReport report;
    report.iou_threshold = iou_threshold;
    double ap_sum = 0;
    int evaluated = 0;
    for (const auto& [cls, pc] : matches.per_class) {
        ClassEval ce;
        ce.id = cls;
        ce.name = gt.class_names[static_cast<size_t>(cls)];
        ce.num_gt = pc.num_gt;
        ce.num_det = static_cast<int>(pc.tp_flags.size());
        for (const uint8_t f : pc.tp_flags)
            (f ? ce.tp : ce.fp)++;
        if (pc.num_gt >= 1) {
            PRCurve curve = pr_curve(matches, cls);
            ce.ap = average_precision(curve);
            ce.evaluated = true;
            ap_sum += ce.ap;
            ++evaluated;
            report.curves.push_back(std::move(curve));
        }
        report.classes.push_back(std::move(ce));
    }
    if (evaluated == 0)
        throw SchemaError("evaluation: no class has ground truth");
    report.map = ap_sum / evaluated;
    return report;
}

inline void write_eval_report(const EvalReport& report, const std::string& path) {
    nlohmann::ordered_json j;
    j["iou_threshold"] = report.iou_threshold;
    j["mAP"] = detail::round4(report.map);
    j["classes"] = nlohmann::ordered_json::array();
    nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
    for (const auto& c : report.classes) {
        j["classes"].push_back({{"id", c.id},
                                {"name", c.name},
                                {"ap", detail::round4(c.ap)},
                                {"num_gt", c.num_gt},
                                {"num_detections", c.num_det},
                                {"tp", c.tp},
                                {"fp", c.fp},
                                {"evaluated", c.evaluated}});
        if (!c.evaluated)
            skipped.push_back(c.id);
    }
    j["skipped_classes"] = skipped;
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write eval report: " + path);
    out << j.dump(2) << "\n";
}

/// CSV with one row per detection rank per evaluated class, for plotting
/// precision-recall figures.
inline void export_pr_plot_data(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write PR data: " + path);
    out << "class_name,rank,recall,precision\n";
    for (const auto& curve : report.curves) {
        const auto it = std::find_if(report.classes.begin(), report.classes.end(),
                                     [&](const ClassEval& c) { return c.id == curve.class_id; });
        const std::string& name = it->name;
        for (size_t k = 0; k < curve.points.size(); ++k) {
            char line[256];
            std::snprintf(line, sizeof line, "%s,%zu,%.6f,%.6f\n", name.c_str(), k + 1,
                          curve.points[k].recall, curve.points[k].precision);
            out << line;
        }
    }
    if (!out)
        throw IoError("failed writing PR data: " + path);
}

}  // namespace signsynth
