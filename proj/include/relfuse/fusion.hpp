#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "relfuse/binning.hpp"
#include "relfuse/scene_model.hpp"

namespace relfuse {

using MatrixX3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;

enum class FusionMode { gt_box, detection };

inline const char* to_string(FusionMode m) { return m == FusionMode::gt_box ? "gt-box" : "detection"; }

inline FusionMode parse_mode(const std::string& s) {
    if (s == "gt-box" || s == "gt_box") return FusionMode::gt_box;
    if (s == "detection") return FusionMode::detection;
    throw Error("unknown mode: " + s);
}

struct FusionConfig {
    double lambda = 1.0;
    double rotation_rel_weight_cap = 5.0;
    double score_threshold = 0.3;
    FusionMode mode = FusionMode::gt_box;

    void validate() const {
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error("lambda must be positive");
        if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
            throw Error("score threshold out of range");
        if (!(rotation_rel_weight_cap >= 0.0)) throw Error("weight cap must be nonnegative");
    }
};

struct Codebooks {
    RotationBinTable rotation;
    DirectionBinTable direction;

    static Codebooks defaults() { return {default_rotation_codebook(), default_direction_codebook()}; }
};

/// One relative constraint x[target] - x[source] = value.
struct LinearEdge {
    std::size_t source = 0;
    std::size_t target = 0;
    Vec3 value = Vec3::Zero();
};

/// Least-squares fusion of unary values with pairwise differences.
///
/// Solves [lambda*I; A] x = [lambda*u; r] per coordinate, where each row of A
/// holds -1 at the source and +1 at the target. The stacked matrix has full
/// column rank for lambda > 0, so the least-squares solution is unique and
/// equals the pseudoinverse solution. Solved with Householder QR.
inline MatrixX3 fuse_linear(const MatrixX3& unary, std::span<const LinearEdge> edges,
                            double lambda) {
    if (!(lambda > 0.0)) throw Error("lambda must be positive");
    const Eigen::Index n = unary.rows();
    if (n < 1) throw Error("no objects to fuse");
    if (edges.empty()) return unary;

    const Eigen::Index e = static_cast<Eigen::Index>(edges.size());
    Eigen::MatrixXd system = Eigen::MatrixXd::Zero(n + e, n);
    Eigen::MatrixXd rhs(n + e, 3);
    system.topRows(n).diagonal().setConstant(lambda);
    rhs.topRows(n) = lambda * unary;
    for (Eigen::Index row = 0; row < e; ++row) {
        const auto& edge = edges[static_cast<std::size_t>(row)];
        if (edge.source == edge.target) throw Error("relative source equals target");
        if (edge.source >= static_cast<std::size_t>(n) || edge.target >= static_cast<std::size_t>(n))
            throw Error("edge index out of range");
        system(n + row, static_cast<Eigen::Index>(edge.source)) -= 1.0;
        system(n + row, static_cast<Eigen::Index>(edge.target)) += 1.0;
        rhs.row(n + row) = edge.value.transpose();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(system);
    return qr.solve(rhs);
}

inline std::unordered_map<int, std::size_t> unary_index(const SceneInstance& scene) {
    std::unordered_map<int, std::size_t> idx;
    for (std::size_t i = 0; i < scene.unary.size(); ++i) {
        if (!idx.emplace(scene.unary[i].id, i).second) throw Error("duplicate unary id");
    }
    return idx;
}

/// Relatives allowed to influence fusion. In detection mode a relative is
/// kept only when its source object scores at or above the threshold.
inline std::vector<const RelativePrediction*> gated_relatives(const SceneInstance& scene,
                                                              const FusionConfig& config) {
    const auto idx = unary_index(scene);
    std::vector<const RelativePrediction*> out;
    for (const auto& r : scene.relative) {
        const auto s = idx.find(r.source_id);
        const auto t = idx.find(r.target_id);
        if (s == idx.end() || t == idx.end()) throw Error("relative references unknown object");
        if (config.mode == FusionMode::detection &&
            scene.unary[s->second].score < config.score_threshold)
            continue;
        out.push_back(&r);
    }
    return out;
}

/// Unary values plus gated relative edges for one linear channel.
struct LinearProblem {
    MatrixX3 unary;
    std::vector<LinearEdge> edges;
};

namespace detail {

template <typename UnaryField, typename RelField>
LinearProblem assemble(const SceneInstance& scene, const FusionConfig& config,
                       UnaryField unary_field, RelField rel_field) {
    config.validate();
    const auto idx = unary_index(scene);
    LinearProblem p;
    p.unary.resize(static_cast<Eigen::Index>(scene.unary.size()), 3);
    for (std::size_t i = 0; i < scene.unary.size(); ++i)
        p.unary.row(static_cast<Eigen::Index>(i)) = unary_field(scene.unary[i]).transpose();
    for (const auto* r : gated_relatives(scene, config))
        p.edges.push_back({idx.at(r->source_id), idx.at(r->target_id), rel_field(*r)});
    return p;
}

}  // namespace detail

inline LinearProblem translation_problem(const SceneInstance& scene, const FusionConfig& config) {
    return detail::assemble(
        scene, config, [](const UnaryPrediction& u) -> const Vec3& { return u.translation; },
        [](const RelativePrediction& r) -> const Vec3& { return r.rel_translation; });
}

inline LinearProblem log_scale_problem(const SceneInstance& scene, const FusionConfig& config) {
    return detail::assemble(
        scene, config, [](const UnaryPrediction& u) -> const Vec3& { return u.log_scale; },
        [](const RelativePrediction& r) -> const Vec3& { return r.rel_log_scale; });
}

inline MatrixX3 fuse_translations(const SceneInstance& scene, const FusionConfig& config) {
    const auto p = translation_problem(scene, config);
    return fuse_linear(p.unary, p.edges, config.lambda);
}

inline MatrixX3 fuse_log_scales(const SceneInstance& scene, const FusionConfig& config) {
    const auto p = log_scale_problem(scene, config);
    return fuse_linear(p.unary, p.edges, config.lambda);
}

/// Inconsistency of rotation R with a predicted direction distribution and
/// relative translation: -log p(d*) + (1 - cos(d*, Rᵀ t̂)), where d* is the
/// direction bin best aligned with Rᵀ t̂.
inline double delta_inconsistency(const Mat3& rotation, std::span<const double> direction_prob,
                                  const Vec3& rel_translation, const DirectionBinTable& dir_table) {
    if (direction_prob.size() != dir_table.size()) throw Error("direction_prob size mismatch");
    const Vec3 t_hat = normalized_or_throw(rel_translation);
    const Vec3 v = rotation.transpose() * t_hat;
    const std::size_t best = quantize_direction(v, dir_table);
    const double p = std::clamp(direction_prob[best], kEps, 1.0);
    return -std::log(p) + std::max(0.0, 1.0 - dir_table[best].dot(v));
}

inline double delta_inconsistency(const Quat& rotation, std::span<const double> direction_prob,
                                  const Vec3& rel_translation, const DirectionBinTable& dir_table) {
    return delta_inconsistency(rotation.toRotationMatrix(), direction_prob, rel_translation,
                               dir_table);
}

struct RotationFusion {
    /// Per object, unnormalized negative log-likelihood over rotation bins.
    std::vector<std::vector<double>> cost;
    std::vector<std::size_t> best_bin;
    std::vector<std::size_t> neighbor_count;
};

inline std::size_t argmin_lowest(std::span<const double> v) {
    return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

inline std::size_t argmax_lowest(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Single round of rotation message passing:
/// cost_m(b) = -log q_m(b) + w_m * sum_n Delta(R_b, d_mn, t_mn),
/// with w_m = min(cap / n_m, 1) over the n_m gated outgoing relatives of m.
inline RotationFusion fuse_rotations(const SceneInstance& scene, const FusionConfig& config,
                                     const RotationBinTable& rot_table,
                                     const DirectionBinTable& dir_table) {
    config.validate();
    const auto idx = unary_index(scene);
    const std::size_t n = scene.unary.size();
    const std::size_t k = rot_table.size();

    std::vector<Mat3> bin_matrices;
    bin_matrices.reserve(k);
    for (const auto& q : rot_table.bins()) bin_matrices.push_back(q.toRotationMatrix());

    RotationFusion out;
    out.cost.assign(n, std::vector<double>(k, 0.0));
    out.neighbor_count.assign(n, 0);
    std::vector<std::vector<double>> message(n, std::vector<double>(k, 0.0));

    for (const auto* r : gated_relatives(scene, config)) {
        const std::size_t m = idx.at(r->source_id);
        ++out.neighbor_count[m];
        for (std::size_t b = 0; b < k; ++b)
            message[m][b] +=
                delta_inconsistency(bin_matrices[b], r->direction_prob, r->rel_translation, dir_table);
    }

    out.best_bin.resize(n);
    for (std::size_t m = 0; m < n; ++m) {
        const auto& prob = scene.unary[m].rotation_prob;
        if (prob.size() != k) throw Error("rotation_prob size mismatch");
        const double w = out.neighbor_count[m] == 0
                             ? 0.0
                             : std::min(config.rotation_rel_weight_cap /
                                            static_cast<double>(out.neighbor_count[m]),
                                        1.0);
        for (std::size_t b = 0; b < k; ++b)
            out.cost[m][b] = -std::log(std::max(prob[b], kEps)) + w * message[m][b];
        out.best_bin[m] = argmin_lowest(out.cost[m]);
    }
    return out;
}

struct FusedObject {
    int id = 0;
    std::string category;
    Vec3 translation = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    std::vector<double> rotation_cost;
    std::size_t rotation_bin = 0;
    Quat rotation = Quat::Identity();
    // Passed through from the unary input.
    double score = 1.0;
    std::optional<Box2d> box2d;
    VoxelPtr shape;
    std::string shape_ref;
};

struct FusedScene {
    std::string scene_id;
    std::vector<FusedObject> objects;
};

namespace detail {

inline FusedObject passthrough(const UnaryPrediction& u) {
    FusedObject o;
    o.id = u.id;
    o.category = u.category;
    o.score = u.score;
    o.box2d = u.box2d;
    o.shape = u.shape;
    o.shape_ref = u.shape_ref;
    return o;
}

}  // namespace detail

/// Fuses translation, log-scale and rotation independently.
inline FusedScene fuse_scene(const SceneInstance& scene, const FusionConfig& config,
                             const Codebooks& tables) {
    FusedScene out;
    out.scene_id = scene.scene_id;
    if (scene.unary.empty()) return out;
    const MatrixX3 t = fuse_translations(scene, config);
    const MatrixX3 s = fuse_log_scales(scene, config);
    RotationFusion rot = fuse_rotations(scene, config, tables.rotation, tables.direction);
    for (std::size_t i = 0; i < scene.unary.size(); ++i) {
        FusedObject o = detail::passthrough(scene.unary[i]);
        o.translation = t.row(static_cast<Eigen::Index>(i)).transpose();
        o.log_scale = s.row(static_cast<Eigen::Index>(i)).transpose();
        o.rotation_cost = std::move(rot.cost[i]);
        o.rotation_bin = rot.best_bin[i];
        o.rotation = tables.rotation[o.rotation_bin];
        out.objects.push_back(std::move(o));
    }
    return out;
}

/// The unary predictions alone, in fused-scene form (rotation = argmax bin).
inline FusedScene unary_only(const SceneInstance& scene, const RotationBinTable& rot_table) {
    FusedScene out;
    out.scene_id = scene.scene_id;
    for (const auto& u : scene.unary) {
        if (u.rotation_prob.size() != rot_table.size()) throw Error("rotation_prob size mismatch");
        FusedObject o = detail::passthrough(u);
        o.translation = u.translation;
        o.log_scale = u.log_scale;
        for (double p : u.rotation_prob) o.rotation_cost.push_back(-std::log(std::max(p, kEps)));
        o.rotation_bin = argmin_lowest(o.rotation_cost);
        o.rotation = rot_table[o.rotation_bin];
        out.objects.push_back(std::move(o));
    }
    return out;
}

}  // namespace relfuse
