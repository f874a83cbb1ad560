#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relfuse/fusion.hpp"
#include "relfuse/scene_model.hpp"

namespace relfuse {

struct Thresholds {
    double delta_t = 0.5;   // meters, error <= delta_t
    double delta_s = 0.2;   // log2 units, error <= delta_s
    double delta_q = 30.0;  // degrees, error <= delta_q
    double delta_V = 0.25;  // voxel IoU >= delta_V
    double delta_b = 0.5;   // box IoU >= delta_b

    void validate() const {
        for (double d : {delta_t, delta_s, delta_q, delta_V, delta_b})
            if (!(d > 0.0)) throw Error("thresholds must be positive");
    }
};

/// Set of per-component conditions a detection must meet to count as a
/// true positive.
class CriteriaMask {
public:
    enum Bit : unsigned { box2d = 1, trans = 2, rot = 4, scale = 8, shape = 16 };

    constexpr CriteriaMask() = default;
    constexpr explicit CriteriaMask(unsigned bits) : bits_(bits) {}

    static constexpr CriteriaMask all() { return CriteriaMask(box2d | trans | rot | scale | shape); }

    /// "all" or '+'-joined component names, e.g. "box2d+trans".
    static CriteriaMask parse(const std::string& text) {
        if (text == "all") return all();
        unsigned bits = 0;
        std::size_t start = 0;
        while (start <= text.size()) {
            const std::size_t end = std::min(text.find('+', start), text.size());
            const std::string tok = text.substr(start, end - start);
            if (tok == "box2d") bits |= box2d;
            else if (tok == "trans") bits |= trans;
            else if (tok == "rot") bits |= rot;
            else if (tok == "scale") bits |= scale;
            else if (tok == "shape") bits |= shape;
            else throw Error("unknown criterion: " + tok);
            start = end + 1;
        }
        return CriteriaMask(bits);
    }

    std::string name() const {
        if (bits_ == all().bits_) return "all";
        std::string out;
        const std::pair<Bit, const char*> names[] = {
            {box2d, "box2d"}, {trans, "trans"}, {rot, "rot"}, {scale, "scale"}, {shape, "shape"}};
        for (const auto& [bit, label] : names) {
            if (!has(bit)) continue;
            if (!out.empty()) out += '+';
            out += label;
        }
        return out;
    }

    constexpr bool has(Bit b) const { return (bits_ & b) != 0; }
    constexpr unsigned bits() const { return bits_; }
    constexpr bool contains(CriteriaMask other) const { return (bits_ & other.bits_) == other.bits_; }

private:
    unsigned bits_ = 0;
};

/// The four criteria sets reported for the detection setting.
inline std::vector<CriteriaMask> default_criteria() {
    return {CriteriaMask::all(), CriteriaMask::parse("box2d+trans"),
            CriteriaMask::parse("box2d+rot"), CriteriaMask::parse("box2d+scale")};
}

inline double translation_error(const Vec3& p, const Vec3& gt) { return (p - gt).norm(); }

/// Mean absolute per-axis difference of log2 extents.
inline double scale_error(const Vec3& extents_p, const Vec3& extents_gt) {
    if (!(extents_p.minCoeff() > 0.0) || !(extents_gt.minCoeff() > 0.0))
        throw Error("non-positive extent");
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += std::abs(std::log2(extents_p[i]) - std::log2(extents_gt[i]));
    return s / 3.0;
}

/// Same metric taking natural-log extents.
inline double scale_error_from_log(const Vec3& log_p, const Vec3& log_gt) {
    return (log_p - log_gt).cwiseAbs().sum() / (3.0 * std::log(2.0));
}

/// Geodesic angle in degrees, minimized over the yaw symmetry group of the
/// ground-truth object.
inline double rotation_error(const Quat& p, const Quat& gt, int symmetry_order = 1) {
    if (symmetry_order < 1) throw Error("invalid symmetry order");
    double best = 180.0;
    for (int k = 0; k < symmetry_order; ++k) {
        const Quat g = gt * yaw_quaternion(2.0 * kPi * k / symmetry_order);
        best = std::min(best, rad2deg(geodesic_angle(p, g)));
    }
    return std::clamp(best, 0.0, 180.0);
}

inline double voxel_iou(const VoxelGrid& p, const VoxelGrid& gt) {
    if (p.resolution != gt.resolution || p.occupancy.size() != gt.occupancy.size())
        throw Error("voxel resolution mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.occupancy.size(); ++i) {
        const bool a = p.occupied(i), b = gt.occupied(i);
        inter += (a && b);
        uni += (a || b);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double box2d_iou(const Box2d& a, const Box2d& b) {
    const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
    const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

/// A final per-object estimate as seen by the metrics.
struct Estimate {
    int id = 0;
    Vec3 translation = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Quat rotation = Quat::Identity();
    std::optional<Box2d> box2d;
    VoxelPtr shape;
    double score = 1.0;
};

inline Estimate to_estimate(const FusedObject& o) {
    return {o.id, o.translation, o.log_scale, o.rotation, o.box2d, o.shape, o.score};
}

/// Memoizes voxel IoU by grid identity; generated scenes share a handful of
/// primitive grids.
class ShapeIouCache {
public:
    double operator()(const VoxelGrid& a, const VoxelGrid& b) {
        const auto key = std::make_pair(&a, &b);
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        const double v = voxel_iou(a, b);
        cache_.emplace(key, v);
        return v;
    }

private:
    std::map<std::pair<const VoxelGrid*, const VoxelGrid*>, double> cache_;
};

inline bool is_true_positive(const Estimate& pred, const GroundTruthObject& gt,
                             const Thresholds& th, CriteriaMask mask,
                             ShapeIouCache* cache = nullptr) {
    using B = CriteriaMask::Bit;
    if (mask.has(B::shape) && (!pred.shape || !gt.shape)) throw Error("shape criterion without voxels");
    if (mask.has(B::box2d)) {
        if (!pred.box2d) throw Error("box2d criterion without predicted box");
        if (box2d_iou(*pred.box2d, gt.box2d) < th.delta_b) return false;
    }
    if (mask.has(B::trans) && translation_error(pred.translation, gt.pose.translation) > th.delta_t)
        return false;
    if (mask.has(B::scale) && scale_error_from_log(pred.log_scale, gt.pose.log_scale) > th.delta_s)
        return false;
    if (mask.has(B::rot) &&
        rotation_error(pred.rotation, gt.pose.rotation, gt.symmetry_order) > th.delta_q)
        return false;
    if (mask.has(B::shape)) {
        const double iou = cache ? (*cache)(*pred.shape, *gt.shape) : voxel_iou(*pred.shape, *gt.shape);
        if (iou < th.delta_V) return false;
    }
    return true;
}

struct PrPoint {
    double score = 0.0;
    bool true_positive = false;
    double recall = 0.0;
    double precision = 0.0;
    /// Max precision at this or any later rank (the interpolation envelope).
    double interpolated_precision = 0.0;
};

struct ApResult {
    double ap = 0.0;
    std::vector<PrPoint> curve;
};

/// Predictions and ground truth of one image; matching never crosses scenes.
struct SceneDetections {
    std::vector<Estimate> preds;
    std::vector<GroundTruthObject> gts;
};

/// Average precision with greedy score-ordered one-to-one matching and
/// all-points interpolation. Ties in score are broken by scene then id.
inline ApResult detection_ap(std::span<const SceneDetections> scenes, const Thresholds& th,
                             CriteriaMask mask) {
    std::size_t total_gt = 0;
    struct Ranked {
        double score;
        std::size_t scene;
        int id;
        std::size_t index;
    };
    std::vector<Ranked> ranked;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        total_gt += scenes[s].gts.size();
        for (std::size_t i = 0; i < scenes[s].preds.size(); ++i) {
            const auto& p = scenes[s].preds[i];
            if (!(p.score >= 0.0 && p.score <= 1.0)) throw Error("score out of range");
            ranked.push_back({p.score, s, p.id, i});
        }
    }
    if (total_gt == 0) throw Error("empty ground truth");
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.scene != b.scene) return a.scene < b.scene;
        if (a.id != b.id) return a.id < b.id;
        return a.index < b.index;
    });

    std::vector<std::vector<bool>> matched(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) matched[s].assign(scenes[s].gts.size(), false);

    ShapeIouCache cache;
    ApResult res;
    std::size_t tp = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        const auto& item = ranked[r];
        const auto& scene = scenes[item.scene];
        bool hit = false;
        for (std::size_t g = 0; g < scene.gts.size(); ++g) {
            if (matched[item.scene][g]) continue;
            if (is_true_positive(scene.preds[item.index], scene.gts[g], th, mask, &cache)) {
                matched[item.scene][g] = true;
                hit = true;
                break;
            }
        }
        tp += hit;
        PrPoint pt;
        pt.score = item.score;
        pt.true_positive = hit;
        pt.recall = static_cast<double>(tp) / static_cast<double>(total_gt);
        pt.precision = static_cast<double>(tp) / static_cast<double>(r + 1);
        res.curve.push_back(pt);
    }
    double envelope = 0.0;
    for (auto it = res.curve.rbegin(); it != res.curve.rend(); ++it) {
        envelope = std::max(envelope, it->precision);
        it->interpolated_precision = envelope;
    }
    double prev_recall = 0.0;
    for (const auto& pt : res.curve) {
        res.ap += (pt.recall - prev_recall) * pt.interpolated_precision;
        prev_recall = pt.recall;
    }
    return res;
}

struct ComponentStats {
    double median = 0.0;
    double mean = 0.0;
    double pct_within = 0.0;
    std::size_t count = 0;
};

/// Median/mean/percent-within over `errors`. For IoU-style components
/// (`higher_is_better`), "within" means value >= threshold.
inline ComponentStats summarize(std::vector<double> errors, double threshold,
                                bool higher_is_better = false) {
    ComponentStats st;
    st.count = errors.size();
    if (errors.empty()) return st;
    std::sort(errors.begin(), errors.end());
    const std::size_t n = errors.size();
    st.median = n % 2 ? errors[n / 2] : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
    st.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(n);
    const auto within = std::count_if(errors.begin(), errors.end(), [&](double e) {
        return higher_is_better ? e >= threshold : e <= threshold;
    });
    st.pct_within = 100.0 * static_cast<double>(within) / static_cast<double>(n);
    return st;
}

struct EvalReport {
    ComponentStats translation;
    ComponentStats rotation;
    ComponentStats scale;
    std::optional<ComponentStats> shape;
    /// Keyed by criteria name ("all", "box2d+trans", ...), in request order.
    std::vector<std::pair<std::string, ApResult>> detection;
};

/// Per-component error statistics over objects matched by id to ground truth.
/// Predictions without a ground-truth id (spurious detections) are skipped.
inline EvalReport scene_error_stats(std::span<const FusedScene> fused,
                                    std::span<const SceneInstance> scenes, const Thresholds& th) {
    if (fused.size() != scenes.size()) throw Error("prediction/ground-truth scene count mismatch");
    std::vector<double> et, er, es, ev;
    bool shapes_complete = true;
    ShapeIouCache cache;
    for (std::size_t i = 0; i < fused.size(); ++i) {
        std::unordered_map<int, const GroundTruthObject*> by_id;
        for (const auto& g : scenes[i].gt_objects) by_id.emplace(g.id, &g);
        for (const auto& o : fused[i].objects) {
            const auto it = by_id.find(o.id);
            if (it == by_id.end()) continue;
            const auto& g = *it->second;
            et.push_back(translation_error(o.translation, g.pose.translation));
            er.push_back(rotation_error(o.rotation, g.pose.rotation, g.symmetry_order));
            es.push_back(scale_error_from_log(o.log_scale, g.pose.log_scale));
            if (o.shape && g.shape) ev.push_back(cache(*o.shape, *g.shape));
            else shapes_complete = false;
        }
    }
    EvalReport rep;
    rep.translation = summarize(std::move(et), th.delta_t);
    rep.rotation = summarize(std::move(er), th.delta_q);
    rep.scale = summarize(std::move(es), th.delta_s);
    if (shapes_complete && !ev.empty()) rep.shape = summarize(std::move(ev), th.delta_V, true);
    return rep;
}

inline std::vector<SceneDetections> detections_of(std::span<const FusedScene> fused,
                                                  std::span<const SceneInstance> scenes) {
    if (fused.size() != scenes.size()) throw Error("prediction/ground-truth scene count mismatch");
    std::vector<SceneDetections> out(fused.size());
    for (std::size_t i = 0; i < fused.size(); ++i) {
        for (const auto& o : fused[i].objects) out[i].preds.push_back(to_estimate(o));
        out[i].gts = scenes[i].gt_objects;
    }
    return out;
}

/// Component statistics plus AP for each criteria set.
inline EvalReport evaluate(std::span<const FusedScene> fused, std::span<const SceneInstance> scenes,
                           const Thresholds& th, const std::vector<CriteriaMask>& criteria) {
    th.validate();
    EvalReport rep = scene_error_stats(fused, scenes, th);
    const auto dets = detections_of(fused, scenes);
    for (const auto& c : criteria) rep.detection.emplace_back(c.name(), detection_ap(dets, th, c));
    return rep;
}

}  // namespace relfuse
