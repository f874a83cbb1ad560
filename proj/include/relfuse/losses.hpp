#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <unordered_map>

#include "relfuse/binning.hpp"
#include "relfuse/fusion.hpp"

namespace relfuse {

struct UnaryLosses {
    double translation = 0.0;
    double scale = 0.0;
    double rotation = 0.0;
    /// Present only when both predicted and ground-truth shapes exist.
    std::optional<double> voxel;
};

struct RelativeLosses {
    double translation = 0.0;
    double scale = 0.0;
    double direction = 0.0;
};

struct JointLosses {
    double translation = 0.0;
    double scale = 0.0;
};

inline double nll(double p) { return -std::log(std::clamp(p, kEps, 1.0)); }

/// Negative mean binary cross-entropy between ground-truth occupancy and a
/// predicted occupancy probability, clamped away from 0 and 1.
inline double voxel_cross_entropy(const VoxelGrid& pred, const VoxelGrid& gt) {
    if (pred.resolution != gt.resolution) throw Error("voxel resolution mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < gt.occupancy.size(); ++i) {
        const double v = gt.occupancy[i];
        const double p = std::clamp(pred.occupancy[i], kEps, 1.0 - kEps);
        sum += v * std::log(p) + (1.0 - v) * std::log(1.0 - p);
    }
    return std::max(0.0, -sum / static_cast<double>(gt.occupancy.size()));
}

/// Rotation loss: NLL of the best symmetry-equivalent copy of the
/// ground-truth bin (the nearest codebook bin to the gt rotation).
inline double rotation_loss(std::span<const double> rotation_prob, const Quat& gt_rotation,
                            int symmetry_order, const RotationBinTable& rot_table) {
    if (rotation_prob.size() != rot_table.size()) throw Error("rotation_prob size mismatch");
    const std::size_t gt_bin = rot_table.nearest(gt_rotation);
    double best = 0.0;
    for (std::size_t b : symmetry_equivalent_bins(gt_bin, symmetry_order, rot_table))
        best = std::max(best, rotation_prob[b]);
    return nll(best);
}

inline UnaryLosses unary_losses(const UnaryPrediction& pred, const GroundTruthObject& gt,
                                const RotationBinTable& rot_table) {
    UnaryLosses l;
    l.translation = (pred.translation - gt.pose.translation).squaredNorm();
    l.scale = (pred.log_scale - gt.pose.log_scale).squaredNorm();
    l.rotation = rotation_loss(pred.rotation_prob, gt.pose.rotation, gt.symmetry_order, rot_table);
    if (pred.shape && gt.shape) l.voxel = voxel_cross_entropy(*pred.shape, *gt.shape);
    return l;
}

inline RelativeLosses relative_losses(const RelativePrediction& pred,
                                      const RelativePrediction& gt_rel) {
    if (pred.direction_prob.size() != gt_rel.direction_prob.size())
        throw Error("direction_prob size mismatch");
    RelativeLosses l;
    l.translation = (pred.rel_translation - gt_rel.rel_translation).squaredNorm();
    l.scale = (pred.rel_log_scale - gt_rel.rel_log_scale).squaredNorm();
    l.direction = nll(pred.direction_prob[argmax_lowest(gt_rel.direction_prob)]);
    return l;
}

/// Squared error of fused translations/log-scales against ground truth,
/// summed over objects. Objects are aligned by id.
inline JointLosses joint_losses(const FusedScene& fused, std::span<const GroundTruthObject> gts) {
    std::unordered_map<int, const GroundTruthObject*> by_id;
    for (const auto& g : gts) by_id.emplace(g.id, &g);
    JointLosses l;
    for (const auto& o : fused.objects) {
        const auto it = by_id.find(o.id);
        if (it == by_id.end()) throw Error("fused object without ground truth");
        l.translation += (o.translation - it->second->pose.translation).squaredNorm();
        l.scale += (o.log_scale - it->second->pose.log_scale).squaredNorm();
    }
    return l;
}

struct JointGradient {
    MatrixX3 unary;     // dL_jt / d(unary translation)
    MatrixX3 relative;  // dL_jt / d(relative translation), one row per gated edge
};

/// Analytic gradient of L_jt through the linear fusion map.
///
/// With X = [lambda*I; A] and b = [lambda*u; r], t* = (XᵀX)⁻¹Xᵀ b, so
/// dL/db = X (XᵀX)⁻¹ 2(t* - t_gt); unary rows pick up an extra lambda.
inline JointGradient joint_translation_gradient(const LinearProblem& problem, double lambda,
                                                const MatrixX3& target) {
    const Eigen::Index n = problem.unary.rows();
    const Eigen::Index e = static_cast<Eigen::Index>(problem.edges.size());
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n + e, n);
    x.topRows(n).diagonal().setConstant(lambda);
    for (Eigen::Index row = 0; row < e; ++row) {
        const auto& edge = problem.edges[static_cast<std::size_t>(row)];
        x(n + row, static_cast<Eigen::Index>(edge.source)) -= 1.0;
        x(n + row, static_cast<Eigen::Index>(edge.target)) += 1.0;
    }
    const MatrixX3 fused = fuse_linear(problem.unary, problem.edges, lambda);
    const Eigen::MatrixXd y = (x.transpose() * x).ldlt().solve(2.0 * (fused - target));
    const Eigen::MatrixXd grad_b = x * y;
    JointGradient g;
    g.unary = lambda * grad_b.topRows(n);
    g.relative = grad_b.bottomRows(e);
    return g;
}

/// Compares the analytic L_jt gradient with central finite differences over
/// every unary and gated relative translation entry. Returns
/// max |analytic - numeric| / max(1, |numeric|).
inline double grad_check_joint(const SceneInstance& scene, const FusionConfig& config,
                               double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw Error("epsilon out of range");
    LinearProblem problem = translation_problem(scene, config);
    const auto idx = unary_index(scene);
    MatrixX3 target(problem.unary.rows(), 3);
    std::vector<bool> seen(scene.unary.size(), false);
    for (const auto& g : scene.gt_objects) {
        const auto it = idx.find(g.id);
        if (it == idx.end()) continue;
        target.row(static_cast<Eigen::Index>(it->second)) = g.pose.translation.transpose();
        seen[it->second] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw Error("unary prediction without ground truth");

    const JointGradient analytic = joint_translation_gradient(problem, config.lambda, target);
    auto loss = [&](const LinearProblem& p) {
        return (fuse_linear(p.unary, p.edges, config.lambda) - target).squaredNorm();
    };

    double worst = 0.0;
    auto compare = [&](double a, double& slot) {
        const double saved = slot;
        slot = saved + epsilon;
        const double up = loss(problem);
        slot = saved - epsilon;
        const double down = loss(problem);
        slot = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
    };
    for (Eigen::Index i = 0; i < problem.unary.rows(); ++i)
        for (int c = 0; c < 3; ++c) compare(analytic.unary(i, c), problem.unary(i, c));
    for (std::size_t j = 0; j < problem.edges.size(); ++j)
        for (int c = 0; c < 3; ++c)
            compare(analytic.relative(static_cast<Eigen::Index>(j), c), problem.edges[j].value[c]);
    return worst;
}

}  // namespace relfuse
