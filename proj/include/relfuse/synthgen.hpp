#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <memory>
#include <random>
#include <optional>
#include <string>
#include <vector>

#include "relfuse/binning.hpp"
#include "relfuse/fusion.hpp"
#include "relfuse/parallel.hpp"
#include "relfuse/scene_model.hpp"

namespace relfuse {

enum class PrimitiveKind { box, ellipsoid };

inline const char* to_string(PrimitiveKind k) { return k == PrimitiveKind::box ? "box" : "ellipsoid"; }

inline PrimitiveKind parse_primitive(const std::string& s) {
    if (s == "box") return PrimitiveKind::box;
    if (s == "ellipsoid") return PrimitiveKind::ellipsoid;
    throw Error("unknown primitive: " + s);
}

/// Cell is occupied iff its center lies inside the primitive inscribed in
/// the unit cube.
inline VoxelGrid voxelize_primitive(PrimitiveKind kind, int resolution = 32) {
    VoxelGrid g(resolution);
    for (int z = 0; z < resolution; ++z)
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x) {
                const Vec3 c((x + 0.5) / resolution - 0.5, (y + 0.5) / resolution - 0.5,
                             (z + 0.5) / resolution - 0.5);
                const bool inside =
                    kind == PrimitiveKind::box ? c.cwiseAbs().maxCoeff() <= 0.5 : (2.0 * c).squaredNorm() <= 1.0;
                g.at(x, y, z) = inside ? 1.0 : 0.0;
            }
    return g;
}

/// Shared 32³ grid per primitive kind.
inline VoxelPtr primitive_grid(PrimitiveKind kind) {
    static const VoxelPtr box = std::make_shared<const VoxelGrid>(voxelize_primitive(PrimitiveKind::box));
    static const VoxelPtr ellipsoid =
        std::make_shared<const VoxelGrid>(voxelize_primitive(PrimitiveKind::ellipsoid));
    return kind == PrimitiveKind::box ? box : ellipsoid;
}

inline std::string primitive_ref(PrimitiveKind kind) { return std::string("shapes/") + to_string(kind) + ".rle"; }

struct CategorySpec {
    std::string name;
    Vec3 extent_min = Vec3::Constant(0.5);
    Vec3 extent_max = Vec3::Constant(0.5);
    int symmetry_order = 1;
    PrimitiveKind primitive = PrimitiveKind::box;
    double weight = 1.0;
    int max_per_scene = 100;
};

/// Dependent objects are placed at a horizontal center distance in
/// [min_dist, max_dist] from the first anchor of the given category,
/// optionally turned to face it.
struct PlacementRule {
    std::string anchor;
    std::string dependent;
    double min_dist = 0.4;
    double max_dist = 1.0;
    bool facing = true;
};

struct LayoutConfig {
    std::vector<CategorySpec> categories;
    std::vector<PlacementRule> rules;
    int min_objects = 3;
    int max_objects = 6;
    // Floor region in the (level) camera frame.
    double room_x_min = -3.5, room_x_max = 3.5;
    double room_z_min = 2.5, room_z_max = 8.5;
    double camera_height_min = 1.0, camera_height_max = 1.5;
    Camera camera;

    const CategorySpec& category(const std::string& name) const {
        for (const auto& c : categories)
            if (c.name == name) return c;
        throw Error("unknown category: " + name);
    }

    void validate() const {
        if (categories.empty()) throw Error("layout has no categories");
        for (const auto& c : categories) {
            if (!(c.extent_min.minCoeff() > 0.0) || !(c.extent_max.array() >= c.extent_min.array()).all())
                throw Error("invalid extent range for " + c.name);
            if (c.symmetry_order != 1 && c.symmetry_order != 2 && c.symmetry_order != 4)
                throw Error("invalid symmetry order for " + c.name);
            if (!(c.weight >= 0.0) || c.max_per_scene < 1) throw Error("invalid category weight/cap");
        }
        for (const auto& r : rules) {
            category(r.anchor);
            category(r.dependent);
            if (!(r.min_dist >= 0.0 && r.max_dist >= r.min_dist)) throw Error("invalid rule distance");
        }
        if (min_objects < 1 || max_objects < min_objects) throw Error("invalid object count range");
        for (double v : {room_x_min, room_x_max, room_z_min, room_z_max, camera_height_min, camera_height_max})
            if (!std::isfinite(v)) throw Error("room bounds must be finite");
        if (!(room_x_max > room_x_min && room_z_max > room_z_min && room_z_min > 0.0))
            throw Error("invalid room bounds");
        if (!(camera_height_min > 0.0 && camera_height_max >= camera_height_min))
            throw Error("invalid camera height range");
    }

    static LayoutConfig defaults() {
        LayoutConfig l;
        l.categories = {
            {"table", {0.6, 0.7, 0.5}, {1.0, 0.8, 0.8}, 4, PrimitiveKind::box, 1.0, 1},
            {"chair", {0.4, 0.8, 0.4}, {0.5, 1.0, 0.5}, 1, PrimitiveKind::box, 2.0, 4},
            {"sofa", {1.6, 0.7, 0.8}, {2.2, 0.9, 1.0}, 1, PrimitiveKind::box, 1.0, 1},
            {"tv", {0.8, 0.5, 0.1}, {1.2, 0.7, 0.2}, 1, PrimitiveKind::box, 0.7, 1},
            {"lamp", {0.3, 1.2, 0.3}, {0.4, 1.6, 0.4}, 4, PrimitiveKind::ellipsoid, 0.7, 2},
        };
        l.rules = {{"table", "chair", 0.4, 1.0, true}, {"sofa", "tv", 1.8, 3.0, true}};
        return l;
    }

    /// Fixed five objects per scene.
    static LayoutConfig benchmark() {
        LayoutConfig l = defaults();
        l.min_objects = l.max_objects = 5;
        return l;
    }
};

struct NoiseProfile {
    double sigma_t_unary = 0.4;
    double sigma_s_unary = 0.25;
    double rotation_unary_temp = 0.35;  // radians of geodesic distance
    double rotation_flip_prob = 0.1;
    double sigma_t_rel = 0.1;
    double sigma_s_rel = 0.08;
    double direction_kappa = 8.0;
    double score_alpha = 8.0, score_beta = 2.0;        // true detections
    double fp_score_alpha = 2.0, fp_score_beta = 8.0;  // spurious detections
    double fp_rate = 1.0;
    double box_jitter = 0.05;  // detection-mode box noise, fraction of box size

    void validate() const {
        for (double s : {sigma_t_unary, sigma_s_unary, sigma_t_rel, sigma_s_rel, box_jitter})
            if (!(s >= 0.0) || !std::isfinite(s)) throw Error("noise sigmas must be nonnegative");
        if (!(direction_kappa > 0.0)) throw Error("kappa must be positive");
        if (!(rotation_unary_temp >= 0.0)) throw Error("rotation temperature must be nonnegative");
        if (!(rotation_flip_prob >= 0.0 && rotation_flip_prob <= 1.0)) throw Error("flip prob out of range");
        for (double p : {score_alpha, score_beta, fp_score_alpha, fp_score_beta})
            if (!(p > 0.0)) throw Error("beta parameters must be positive");
        if (!(fp_rate >= 0.0)) throw Error("fp rate must be nonnegative");
    }

    /// Benchmark profile used by the trend studies.
    static NoiseProfile benchmark() { return {}; }

    /// Exact predictions with one-hot rotation and direction distributions.
    static NoiseProfile noiseless() {
        NoiseProfile n;
        n.sigma_t_unary = n.sigma_s_unary = n.sigma_t_rel = n.sigma_s_rel = 0.0;
        n.rotation_unary_temp = 0.0;
        n.rotation_flip_prob = 0.0;
        n.direction_kappa = std::numeric_limits<double>::infinity();
        n.fp_rate = 0.0;
        n.box_jitter = 0.0;
        return n;
    }
};

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of scene `index` in a dataset seeded with `seed`.
inline std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(seed + index); }

inline double sample_beta(double alpha, double beta, Rng& rng) {
    std::gamma_distribution<double> ga(alpha, 1.0), gb(beta, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x + y > 0.0 ? x / (x + y) : 0.5;
}

inline Vec3 gaussian3(double sigma, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    const double a = n(rng), b = n(rng), c = n(rng);
    return sigma * Vec3(a, b, c);
}

/// Numerically stable softmax of `logits`; +inf-dominated inputs collapse to
/// one-hot at the lowest arg-max.
inline std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    if (!std::isfinite(mx)) return one_hot(argmax_lowest(logits), logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - mx);
    for (double& v : p) v /= sum;
    return p;
}

inline std::array<Vec3, 8> cuboid_corners(const Pose& pose) {
    const Vec3 half = 0.5 * pose.extents();
    const Mat3 r = pose.rotation_matrix();
    std::array<Vec3, 8> out;
    for (int i = 0; i < 8; ++i) {
        const Vec3 local((i & 1 ? 1 : -1) * half.x(), (i & 2 ? 1 : -1) * half.y(), (i & 4 ? 1 : -1) * half.z());
        out[static_cast<std::size_t>(i)] = pose.translation + r * local;
    }
    return out;
}

/// Pinhole projection of the 8 cuboid corners, min/max, clipped to the image.
inline Box2d project_box(const Pose& pose, const Camera& cam) {
    Box2d b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& c : cuboid_corners(pose)) {
        if (!(c.z() > 0.0)) throw Error("unprojectable");
        const double u = cam.fx * c.x() / c.z() + cam.cx;
        const double v = cam.fy * c.y() / c.z() + cam.cy;
        b.xmin = std::min(b.xmin, u);
        b.xmax = std::max(b.xmax, u);
        b.ymin = std::min(b.ymin, v);
        b.ymax = std::max(b.ymax, v);
    }
    b.xmin = std::clamp(b.xmin, 0.0, static_cast<double>(cam.width));
    b.xmax = std::clamp(b.xmax, 0.0, static_cast<double>(cam.width));
    b.ymin = std::clamp(b.ymin, 0.0, static_cast<double>(cam.height));
    b.ymax = std::clamp(b.ymax, 0.0, static_cast<double>(cam.height));
    return b;
}

inline Box2d project_box(const GroundTruthObject& gt, const Camera& cam) { return project_box(gt.pose, cam); }

/// True iff every corner is in front of the camera and projects inside the image.
inline bool in_frustum(const Pose& pose, const Camera& cam) {
    for (const auto& c : cuboid_corners(pose)) {
        if (!(c.z() > 0.05)) return false;
        const double u = cam.fx * c.x() / c.z() + cam.cx;
        const double v = cam.fy * c.y() / c.z() + cam.cy;
        if (u < 0.0 || u > cam.width || v < 0.0 || v > cam.height) return false;
    }
    return true;
}

namespace detail {

struct Footprint {
    double x0, x1, z0, z1;
    bool overlaps(const Footprint& o) const { return x0 < o.x1 && o.x0 < x1 && z0 < o.z1 && o.z0 < z1; }
};

inline Footprint footprint(const Vec3& center, const Vec3& extents, double yaw) {
    const double c = std::abs(std::cos(yaw)), s = std::abs(std::sin(yaw));
    const double hx = 0.5 * (c * extents.x() + s * extents.z());
    const double hz = 0.5 * (s * extents.x() + c * extents.z());
    return {center.x() - hx, center.x() + hx, center.z() - hz, center.z() + hz};
}

inline Vec3 sample_extents(const CategorySpec& c, Rng& rng) {
    Vec3 e;
    for (int i = 0; i < 3; ++i) e[i] = std::uniform_real_distribution<double>(c.extent_min[i], c.extent_max[i])(rng);
    return e;
}

inline const PlacementRule* rule_for(const LayoutConfig& layout, const std::string& dependent) {
    for (const auto& r : layout.rules)
        if (r.dependent == dependent) return &r;
    return nullptr;
}

/// Picks the category of each object, honoring per-scene caps and turning
/// the first orphaned dependent into its anchor.
inline std::vector<std::string> sample_categories(const LayoutConfig& layout, int count, Rng& rng) {
    std::vector<std::string> out;
    std::vector<int> used(layout.categories.size(), 0);
    for (int i = 0; i < count; ++i) {
        std::vector<double> w;
        for (std::size_t c = 0; c < layout.categories.size(); ++c)
            w.push_back(used[c] < layout.categories[c].max_per_scene ? layout.categories[c].weight : 0.0);
        if (std::all_of(w.begin(), w.end(), [](double v) { return v <= 0.0; })) throw Error("layout infeasible");
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        const std::size_t c = pick(rng);
        ++used[c];
        out.push_back(layout.categories[c].name);
    }
    for (const auto& rule : layout.rules) {
        const bool has_anchor = std::find(out.begin(), out.end(), rule.anchor) != out.end();
        auto dep = std::find(out.begin(), out.end(), rule.dependent);
        if (has_anchor || dep == out.end() || out.size() < 2) continue;
        *dep = rule.anchor;
    }
    return out;
}

}  // namespace detail

namespace detail {

inline std::optional<std::vector<GroundTruthObject>> try_layout(const LayoutConfig& layout, Rng& rng) {
    const int count = std::uniform_int_distribution<int>(layout.min_objects, layout.max_objects)(rng);
    std::vector<std::string> cats = detail::sample_categories(layout, count, rng);

    // Anchors and free objects first, dependents after their anchors.
    std::vector<std::size_t> order;
    std::vector<bool> dependent(cats.size(), false);
    for (std::size_t i = 0; i < cats.size(); ++i) {
        const auto* rule = detail::rule_for(layout, cats[i]);
        dependent[i] = rule && std::find(cats.begin(), cats.end(), rule->anchor) != cats.end();
    }
    for (std::size_t i = 0; i < cats.size(); ++i)
        if (!dependent[i]) order.push_back(i);
    for (std::size_t i = 0; i < cats.size(); ++i)
        if (dependent[i]) order.push_back(i);

    const double cam_h =
        std::uniform_real_distribution<double>(layout.camera_height_min, layout.camera_height_max)(rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<GroundTruthObject> placed(cats.size());
    std::vector<bool> done(cats.size(), false);
    std::vector<detail::Footprint> footprints;
    for (std::size_t i : order) {
        const CategorySpec& spec = layout.category(cats[i]);
        const PlacementRule* rule = dependent[i] ? detail::rule_for(layout, cats[i]) : nullptr;
        const GroundTruthObject* anchor = nullptr;
        if (rule) {
            for (std::size_t j = 0; j < cats.size(); ++j)
                if (done[j] && cats[j] == rule->anchor) {
                    anchor = &placed[j];
                    break;
                }
        }
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            const Vec3 ext = detail::sample_extents(spec, rng);
            double yaw = 2.0 * kPi * unit(rng);
            Vec3 center;
            center.y() = cam_h - 0.5 * ext.y();
            if (anchor) {
                const double phi = 2.0 * kPi * unit(rng);
                const double dist = rule->min_dist + (rule->max_dist - rule->min_dist) * unit(rng);
                center.x() = anchor->pose.translation.x() + dist * std::cos(phi);
                center.z() = anchor->pose.translation.z() + dist * std::sin(phi);
                if (rule->facing)
                    yaw = std::atan2(anchor->pose.translation.x() - center.x(),
                                     anchor->pose.translation.z() - center.z());
            } else {
                center.x() = layout.room_x_min + (layout.room_x_max - layout.room_x_min) * unit(rng);
                center.z() = layout.room_z_min + (layout.room_z_max - layout.room_z_min) * unit(rng);
            }
            if (center.x() < layout.room_x_min || center.x() > layout.room_x_max ||
                center.z() < layout.room_z_min || center.z() > layout.room_z_max)
                continue;
            const auto fp = detail::footprint(center, ext, yaw);
            if (std::any_of(footprints.begin(), footprints.end(), [&](const auto& o) { return o.overlaps(fp); }))
                continue;
            Pose pose(center, ext.array().log().matrix(), yaw_quaternion(yaw));
            if (!in_frustum(pose, layout.camera)) continue;

            GroundTruthObject& obj = placed[i];
            obj.id = static_cast<int>(i);
            obj.category = spec.name;
            obj.pose = pose;
            obj.symmetry_order = spec.symmetry_order;
            obj.shape = primitive_grid(spec.primitive);
            obj.shape_ref = primitive_ref(spec.primitive);
            obj.box2d = project_box(pose, layout.camera);
            footprints.push_back(fp);
            done[i] = true;
            ok = true;
        }
        if (!ok) return std::nullopt;
    }
    return placed;
}

}  // namespace detail

/// Samples a ground-truth layout (no predictions). Deterministic in `seed`.
///
/// Objects stand on the floor of a level camera, keep axis-aligned
/// footprints disjoint, lie fully inside the image, and dependents sit within
/// their rule's distance band from the anchor. Each object gets up to 1000
/// placement attempts; a stuck layout is redrawn from scratch up to 50 times.
inline SceneInstance sample_scene(const LayoutConfig& layout, std::uint64_t seed) {
    layout.validate();
    Rng rng(seed);
    SceneInstance scene;
    scene.camera = layout.camera;
    for (int restart = 0; restart < 50; ++restart) {
        if (auto objs = detail::try_layout(layout, rng)) {
            scene.gt_objects = std::move(*objs);
            return scene;
        }
    }
    throw Error("layout infeasible");
}

/// Softmax over negative geodesic distances to `center`; temp == 0 gives a
/// one-hot at the nearest bin.
inline std::vector<double> rotation_distribution(const Quat& center, double temp, const RotationBinTable& table) {
    if (temp <= 0.0) return one_hot(table.nearest(center), table.size());
    std::vector<double> logits;
    for (const auto& b : table.bins()) logits.push_back(-geodesic_angle(b, center) / temp);
    return softmax(logits);
}

/// direction_prob(b) ∝ exp(kappa · <bin_b, direction>); infinite kappa gives
/// the one-hot at the quantized direction.
inline std::vector<double> direction_distribution(const Vec3& direction, double kappa,
                                                  const DirectionBinTable& table) {
    if (std::isinf(kappa)) return one_hot(quantize_direction(direction, table), table.size());
    std::vector<double> logits;
    for (const auto& b : table.bins()) logits.push_back(kappa * b.dot(direction));
    return softmax(logits);
}

/// Noisy unary prediction of a ground-truth object. Draw order per call:
/// translation, log-scale, flip decision, flip bin, score.
inline UnaryPrediction corrupt_unary(const GroundTruthObject& gt, const NoiseProfile& noise,
                                     const RotationBinTable& rot_table, Rng& rng) {
    UnaryPrediction u;
    u.id = gt.id;
    u.category = gt.category;
    u.translation = gt.pose.translation + gaussian3(noise.sigma_t_unary, rng);
    u.log_scale = gt.pose.log_scale + gaussian3(noise.sigma_s_unary, rng);
    const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < noise.rotation_flip_prob;
    const std::size_t flip_bin = std::uniform_int_distribution<std::size_t>(0, rot_table.size() - 1)(rng);
    const Quat center = flip ? rot_table[flip_bin] : gt.pose.rotation;
    u.rotation_prob = rotation_distribution(center, noise.rotation_unary_temp, rot_table);
    u.score = sample_beta(noise.score_alpha, noise.score_beta, rng);
    u.box2d = gt.box2d;
    u.shape = gt.shape;
    u.shape_ref = gt.shape_ref;
    return u;
}

/// Noisy relative prediction from m to n built around the exact relative pose.
inline RelativePrediction corrupt_relative(int id_m, const Pose& pose_m, int id_n, const Pose& pose_n,
                                           const NoiseProfile& noise, const DirectionBinTable& dir_table,
                                           Rng& rng) {
    RelativePrediction r = relative_ground_truth(id_m, pose_m, id_n, pose_n, dir_table);
    r.rel_translation += gaussian3(noise.sigma_t_rel, rng);
    r.rel_log_scale += gaussian3(noise.sigma_s_rel, rng);
    r.direction_prob = direction_distribution(true_direction(pose_m, pose_n), noise.direction_kappa, dir_table);
    return r;
}

inline RelativePrediction corrupt_relative(const GroundTruthObject& m, const GroundTruthObject& n,
                                           const NoiseProfile& noise, const DirectionBinTable& dir_table,
                                           Rng& rng) {
    return corrupt_relative(m.id, m.pose, n.id, n.pose, noise, dir_table, rng);
}

/// Ids of spurious detections start here; ground-truth ids are 0..N-1.
inline constexpr int kSpuriousIdBase = 1000;

namespace detail {

inline Box2d jitter_box(const Box2d& b, double frac, const Camera& cam, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    const double w = b.width(), h = b.height();
    const double dx0 = n(rng), dy0 = n(rng), dx1 = n(rng), dy1 = n(rng);
    Box2d out{b.xmin + frac * w * dx0, b.ymin + frac * h * dy0, b.xmax + frac * w * dx1, b.ymax + frac * h * dy1};
    if (out.xmin > out.xmax) std::swap(out.xmin, out.xmax);
    if (out.ymin > out.ymax) std::swap(out.ymin, out.ymax);
    out.xmin = std::clamp(out.xmin, 0.0, static_cast<double>(cam.width));
    out.xmax = std::clamp(out.xmax, 0.0, static_cast<double>(cam.width));
    out.ymin = std::clamp(out.ymin, 0.0, static_cast<double>(cam.height));
    out.ymax = std::clamp(out.ymax, 0.0, static_cast<double>(cam.height));
    return out;
}

/// A hallucinated object: random category and pose somewhere in view.
inline GroundTruthObject spurious_object(const LayoutConfig& layout, int id, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& spec =
        layout.categories[std::uniform_int_distribution<std::size_t>(0, layout.categories.size() - 1)(rng)];
    const double cam_h = layout.camera_height_min + (layout.camera_height_max - layout.camera_height_min) * unit(rng);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const Vec3 ext = sample_extents(spec, rng);
        const Vec3 c(layout.room_x_min + (layout.room_x_max - layout.room_x_min) * unit(rng), cam_h - 0.5 * ext.y(),
                     layout.room_z_min + (layout.room_z_max - layout.room_z_min) * unit(rng));
        Pose pose(c, ext.array().log().matrix(), yaw_quaternion(2.0 * kPi * unit(rng)));
        if (!in_frustum(pose, layout.camera)) continue;
        GroundTruthObject o;
        o.id = id;
        o.category = spec.name;
        o.pose = pose;
        o.symmetry_order = spec.symmetry_order;
        o.shape = primitive_grid(spec.primitive);
        o.shape_ref = primitive_ref(spec.primitive);
        o.box2d = project_box(pose, layout.camera);
        return o;
    }
    throw Error("layout infeasible");
}

}  // namespace detail

/// Ground truth plus fabricated predictions for one scene.
///
/// Unary predictions are noisy copies of every object; relatives cover every
/// ordered pair. In detection mode, boxes are jittered and Poisson(fp_rate)
/// spurious objects are added with low scores; their relatives are
/// consistent with the hallucinated pose.
inline SceneInstance make_scene(const LayoutConfig& layout, const NoiseProfile& noise, const Codebooks& tables,
                                std::uint64_t seed, FusionMode mode) {
    SceneInstance scene = sample_scene(layout, seed);
    Rng rng(splitmix64(seed ^ 0x6a09e667f3bcc909ULL));

    std::vector<GroundTruthObject> believed = scene.gt_objects;
    for (const auto& g : scene.gt_objects) scene.unary.push_back(corrupt_unary(g, noise, tables.rotation, rng));
    if (mode == FusionMode::detection) {
        for (auto& u : scene.unary) u.box2d = detail::jitter_box(*u.box2d, noise.box_jitter, scene.camera, rng);
        const int n_fp = noise.fp_rate > 0.0 ? std::poisson_distribution<int>(noise.fp_rate)(rng) : 0;
        for (int k = 0; k < n_fp; ++k) {
            GroundTruthObject fake = detail::spurious_object(layout, kSpuriousIdBase + k, rng);
            NoiseProfile fp_noise = noise;
            fp_noise.score_alpha = noise.fp_score_alpha;
            fp_noise.score_beta = noise.fp_score_beta;
            fp_noise.rotation_flip_prob = 0.0;
            UnaryPrediction u = corrupt_unary(fake, fp_noise, tables.rotation, rng);
            u.translation = fake.pose.translation;
            u.log_scale = fake.pose.log_scale;
            scene.unary.push_back(std::move(u));
            believed.push_back(std::move(fake));
        }
    }
    for (const auto& m : believed)
        for (const auto& n : believed)
            if (m.id != n.id) scene.relative.push_back(corrupt_relative(m, n, noise, tables.direction, rng));
    return scene;
}

inline std::string scene_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%05zu", index);
    return buf;
}

inline std::vector<SceneInstance> make_dataset(const LayoutConfig& layout, const NoiseProfile& noise,
                                               std::size_t n_scenes, std::uint64_t seed, FusionMode mode,
                                               const Codebooks& tables = Codebooks::defaults(), unsigned jobs = 1) {
    layout.validate();
    noise.validate();
    std::vector<SceneInstance> out(n_scenes);
    parallel_for(n_scenes, jobs, [&](std::size_t i) {
        out[i] = make_scene(layout, noise, tables, scene_seed(seed, i), mode);
        out[i].scene_id = scene_name(i);
    });
    return out;
}

/// Relative directions (in the source frame) of all ordered object pairs in
/// freshly sampled layouts; input for a clustered direction codebook.
inline std::vector<Vec3> sample_relative_directions(const LayoutConfig& layout, std::size_t n_scenes,
                                                    std::uint64_t seed) {
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < n_scenes; ++i) {
        const SceneInstance s = sample_scene(layout, scene_seed(seed, i));
        for (const auto& m : s.gt_objects)
            for (const auto& n : s.gt_objects)
                if (m.id != n.id) out.push_back(true_direction(m.pose, n.pose));
    }
    return out;
}

}  // namespace relfuse
