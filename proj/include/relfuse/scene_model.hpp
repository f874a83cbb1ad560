#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relfuse/geometry.hpp"

namespace relfuse {

/// Object pose in the camera frame.
///
/// `log_scale` holds the natural log of the full per-axis extent in meters,
/// ordered (width, height, depth) in the canonical object frame.
/// `rotation` maps canonical coordinates to camera coordinates.
struct Pose {
    Vec3 translation = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Quat rotation = Quat::Identity();

    Pose() = default;
    Pose(const Vec3& t, const Vec3& s, const Quat& q)
        : translation(t), log_scale(s), rotation(q) {
        if (!translation.allFinite()) throw Error("non-finite translation");
        if (!log_scale.allFinite()) throw Error("non-finite log scale");
        const double n = rotation.norm();
        if (!(n > kEps) || !std::isfinite(n)) throw Error("invalid quaternion");
        rotation.normalize();
    }

    Vec3 extents() const { return log_scale.array().exp().matrix(); }
    Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
};

enum class CodebookSource { fixed_grid, clustered };

inline const char* to_string(CodebookSource s) {
    return s == CodebookSource::fixed_grid ? "fixed-grid" : "clustered";
}

/// Codebook of unit quaternions used as rotation classes.
class RotationBinTable {
public:
    RotationBinTable(std::vector<Quat> bins, CodebookSource source)
        : bins_(std::move(bins)), source_(source) {
        if (bins_.empty()) throw Error("empty codebook");
        for (auto& q : bins_) {
            const double n = q.norm();
            if (!(n > kEps) || !std::isfinite(n)) throw Error("invalid quaternion");
            q.normalize();
        }
        for (std::size_t i = 0; i < bins_.size(); ++i)
            for (std::size_t j = i + 1; j < bins_.size(); ++j)
                if (geodesic_angle(bins_[i], bins_[j]) <= 1e-9)
                    throw Error("duplicate codebook bin");
    }

    std::size_t size() const { return bins_.size(); }
    const Quat& operator[](std::size_t i) const { return bins_[i]; }
    const std::vector<Quat>& bins() const { return bins_; }
    CodebookSource source() const { return source_; }

    /// Bin with smallest geodesic distance to `q`; ties go to the lowest index.
    std::size_t nearest(const Quat& q) const {
        std::size_t best = 0;
        double best_d = geodesic_angle(bins_[0], q);
        for (std::size_t i = 1; i < bins_.size(); ++i) {
            const double d = geodesic_angle(bins_[i], q);
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }

private:
    std::vector<Quat> bins_;
    CodebookSource source_;
};

/// Codebook of unit 3-vectors used as relative-direction classes.
class DirectionBinTable {
public:
    DirectionBinTable(std::vector<Vec3> bins, CodebookSource source)
        : bins_(std::move(bins)), source_(source) {
        if (bins_.empty()) throw Error("empty codebook");
        for (auto& v : bins_) v = normalized_or_throw(v);
        for (std::size_t i = 0; i < bins_.size(); ++i)
            for (std::size_t j = i + 1; j < bins_.size(); ++j)
                if ((bins_[i] - bins_[j]).norm() <= 1e-12)
                    throw Error("duplicate codebook bin");
    }

    std::size_t size() const { return bins_.size(); }
    const Vec3& operator[](std::size_t i) const { return bins_[i]; }
    const std::vector<Vec3>& bins() const { return bins_; }
    CodebookSource source() const { return source_; }

private:
    std::vector<Vec3> bins_;
    CodebookSource source_;
};

/// Occupancy grid over the canonical unit cube, indexed [x][y][z] with x
/// fastest. A cell is occupied iff its value is >= 0.5.
struct VoxelGrid {
    int resolution = 32;
    std::vector<double> occupancy;

    VoxelGrid() : occupancy(32 * 32 * 32, 0.0) {}
    explicit VoxelGrid(int res, double fill = 0.0)
        : resolution(res), occupancy(static_cast<std::size_t>(res) * res * res, fill) {
        if (res <= 0) throw Error("invalid voxel resolution");
        if (fill < 0.0 || fill > 1.0) throw Error("voxel value out of range");
    }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>((z * resolution + y) * resolution + x);
    }
    double& at(int x, int y, int z) { return occupancy[index(x, y, z)]; }
    double at(int x, int y, int z) const { return occupancy[index(x, y, z)]; }
    bool occupied(std::size_t i) const { return occupancy[i] >= 0.5; }
    std::size_t occupied_count() const {
        return static_cast<std::size_t>(
            std::count_if(occupancy.begin(), occupancy.end(), [](double v) { return v >= 0.5; }));
    }
    void validate() const {
        if (occupancy.size() != static_cast<std::size_t>(resolution) * resolution * resolution)
            throw Error("voxel size mismatch");
        for (double v : occupancy)
            if (!(v >= 0.0 && v <= 1.0)) throw Error("voxel value out of range");
    }
};

using VoxelPtr = std::shared_ptr<const VoxelGrid>;

struct Box2d {
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    bool well_ordered() const { return xmin <= xmax && ymin <= ymax; }
};

struct Camera {
    double fx = 500.0, fy = 500.0, cx = 320.0, cy = 240.0;
    int width = 640, height = 480;
};

struct GroundTruthObject {
    int id = 0;
    std::string category;
    Pose pose;
    int symmetry_order = 1;
    VoxelPtr shape;
    std::string shape_ref;
    Box2d box2d;
};

struct UnaryPrediction {
    int id = 0;
    std::string category;
    Vec3 translation = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    std::vector<double> rotation_prob;
    double score = 1.0;
    std::optional<Box2d> box2d;
    VoxelPtr shape;
    std::string shape_ref;
};

struct RelativePrediction {
    int source_id = 0;
    int target_id = 0;
    Vec3 rel_translation = Vec3::Zero();
    Vec3 rel_log_scale = Vec3::Zero();
    std::vector<double> direction_prob;
};

struct SceneInstance {
    std::string scene_id;
    Camera camera;
    std::vector<GroundTruthObject> gt_objects;
    std::vector<UnaryPrediction> unary;
    std::vector<RelativePrediction> relative;
};

inline bool is_simplex(std::span<const double> p, double tol = 1e-9) {
    if (p.empty()) return false;
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v)) return false;
        sum += v;
    }
    return std::abs(sum - 1.0) <= tol;
}

inline void validate(const GroundTruthObject& o) {
    if (!o.box2d.well_ordered()) throw Error("box2d not well-ordered");
    if (o.symmetry_order != 1 && o.symmetry_order != 2 && o.symmetry_order != 4)
        throw Error("invalid symmetry order");
    if (o.shape) o.shape->validate();
}

inline void validate(const UnaryPrediction& u, std::size_t rotation_bins) {
    if (u.rotation_prob.size() != rotation_bins) throw Error("rotation_prob size mismatch");
    if (!is_simplex(u.rotation_prob)) throw Error("rotation_prob is not a simplex");
    if (!(u.score >= 0.0 && u.score <= 1.0)) throw Error("score out of range");
    if (!u.translation.allFinite() || !u.log_scale.allFinite()) throw Error("non-finite unary");
}

inline void validate(const RelativePrediction& r, std::size_t direction_bins) {
    if (r.source_id == r.target_id) throw Error("relative source equals target");
    if (r.direction_prob.size() != direction_bins) throw Error("direction_prob size mismatch");
    if (!is_simplex(r.direction_prob)) throw Error("direction_prob is not a simplex");
    if (!r.rel_translation.allFinite() || !r.rel_log_scale.allFinite())
        throw Error("non-finite relative");
}

/// Checks id consistency: unique unary ids, relatives reference unary ids,
/// at most one relative per ordered pair.
inline void validate(const SceneInstance& s, std::size_t rotation_bins, std::size_t direction_bins) {
    for (const auto& o : s.gt_objects) validate(o);
    std::vector<int> ids;
    for (const auto& u : s.unary) {
        validate(u, rotation_bins);
        ids.push_back(u.id);
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw Error("duplicate unary id");
    std::vector<std::pair<int, int>> pairs;
    for (const auto& r : s.relative) {
        validate(r, direction_bins);
        if (!std::binary_search(ids.begin(), ids.end(), r.source_id) ||
            !std::binary_search(ids.begin(), ids.end(), r.target_id))
            throw Error("relative references unknown object");
        pairs.emplace_back(r.source_id, r.target_id);
    }
    std::sort(pairs.begin(), pairs.end());
    if (std::adjacent_find(pairs.begin(), pairs.end()) != pairs.end())
        throw Error("duplicate relative pair");
}

/// Index of the direction bin with the largest cosine to `v`; ties go to
/// the lowest index.
inline std::size_t quantize_direction(const Vec3& v, const DirectionBinTable& table) {
    const Vec3 unit = normalized_or_throw(v);
    std::size_t best = 0;
    double best_dot = table[0].dot(unit);
    for (std::size_t i = 1; i < table.size(); ++i) {
        const double d = table[i].dot(unit);
        if (d > best_dot) {
            best_dot = d;
            best = i;
        }
    }
    return best;
}

/// Unit direction of object n expressed in the frame of object m.
inline Vec3 true_direction(const Pose& m, const Pose& n) {
    return frame_transform(m.rotation, normalized_or_throw(n.translation - m.translation));
}

inline std::vector<double> one_hot(std::size_t k, std::size_t size) {
    std::vector<double> p(size, 0.0);
    p[k] = 1.0;
    return p;
}

/// Exact relative pose from object m (source) to object n (target).
inline RelativePrediction relative_ground_truth(int source_id, const Pose& pose_m, int target_id,
                                                const Pose& pose_n,
                                                const DirectionBinTable& dir_table) {
    if (source_id == target_id) throw Error("relative source equals target");
    RelativePrediction r;
    r.source_id = source_id;
    r.target_id = target_id;
    r.rel_translation = pose_n.translation - pose_m.translation;
    r.rel_log_scale = pose_n.log_scale - pose_m.log_scale;
    const Vec3 d = true_direction(pose_m, pose_n);
    r.direction_prob = one_hot(quantize_direction(d, dir_table), dir_table.size());
    return r;
}

inline RelativePrediction relative_ground_truth(const GroundTruthObject& m,
                                                const GroundTruthObject& n,
                                                const DirectionBinTable& dir_table) {
    return relative_ground_truth(m.id, m.pose, n.id, n.pose, dir_table);
}

/// Reverses a relative prediction. Translation and log-scale are negated
/// exactly; the direction is rederived from the poses in the new source frame.
inline RelativePrediction swap(const RelativePrediction& rel, const Pose& source_pose,
                               const Pose& target_pose, const DirectionBinTable& dir_table) {
    RelativePrediction out;
    out.source_id = rel.target_id;
    out.target_id = rel.source_id;
    out.rel_translation = -rel.rel_translation;
    out.rel_log_scale = -rel.rel_log_scale;
    const Vec3 d = true_direction(target_pose, source_pose);
    out.direction_prob = one_hot(quantize_direction(d, dir_table), dir_table.size());
    return out;
}

}  // namespace relfuse
