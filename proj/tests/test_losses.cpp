#include <random>
#include <set>

#include <gtest/gtest.h>

#include "relfuse/losses.hpp"
#include "relfuse/synthgen.hpp"

using namespace relfuse;

namespace {

GroundTruthObject gt_object(const Vec3& t, const Vec3& s, double yaw, int sym = 1) {
    GroundTruthObject g;
    g.id = 0;
    g.pose = Pose(t, s, yaw_quaternion(yaw));
    g.symmetry_order = sym;
    g.box2d = {0, 0, 1, 1};
    return g;
}

// Random scene with N objects and E random directed edges; gt differs from
// the unaries so the loss has a non-trivial gradient.
SceneInstance random_instance(std::mt19937_64& rng, int n, int e) {
    std::normal_distribution<double> g(0.0, 1.0);
    SceneInstance s;
    for (int i = 0; i < n; ++i) {
        GroundTruthObject o = gt_object(Vec3(g(rng), g(rng), 5 + g(rng)), Vec3::Zero(), 0.0);
        o.id = i;
        s.gt_objects.push_back(o);
        UnaryPrediction u;
        u.id = i;
        u.translation = o.pose.translation + 0.4 * Vec3(g(rng), g(rng), g(rng));
        u.rotation_prob.assign(24, 1.0 / 24.0);
        s.unary.push_back(u);
    }
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::set<std::pair<int, int>> used;
    while (static_cast<int>(s.relative.size()) < e) {
        const int a = pick(rng), b = pick(rng);
        if (a == b || !used.insert({a, b}).second) continue;
        RelativePrediction r;
        r.source_id = a;
        r.target_id = b;
        r.rel_translation = s.gt_objects[static_cast<std::size_t>(b)].pose.translation -
                            s.gt_objects[static_cast<std::size_t>(a)].pose.translation + 0.1 * Vec3(g(rng), g(rng), g(rng));
        r.direction_prob.assign(24, 1.0 / 24.0);
        s.relative.push_back(r);
    }
    return s;
}

}  // namespace

TEST(UnaryLosses, PerfectPrediction) {
    const auto table = default_rotation_codebook();
    GroundTruthObject g = gt_object(Vec3(1, 2, 3), Vec3(0.1, 0.2, 0.3), deg2rad(45.0));
    g.shape = primitive_grid(PrimitiveKind::box);
    UnaryPrediction u;
    u.translation = g.pose.translation;
    u.log_scale = g.pose.log_scale;
    u.rotation_prob = one_hot(3, 24);
    u.shape = g.shape;
    const auto l = unary_losses(u, g, table);
    EXPECT_EQ(l.translation, 0.0);
    EXPECT_EQ(l.scale, 0.0);
    EXPECT_EQ(l.rotation, 0.0);
    ASSERT_TRUE(l.voxel.has_value());
    EXPECT_LT(*l.voxel, 1e-9);
}

TEST(UnaryLosses, Offsets) {
    const auto table = default_rotation_codebook();
    const GroundTruthObject g = gt_object(Vec3(1, 2, 3), Vec3::Zero(), 0.0);
    UnaryPrediction u;
    u.translation = g.pose.translation + Vec3(1, 0, 0);
    u.log_scale = Vec3(0.5, 0, 0);
    u.rotation_prob = one_hot(1, 24);
    const auto l = unary_losses(u, g, table);
    EXPECT_EQ(l.translation, 1.0);
    EXPECT_EQ(l.scale, 0.25);
    EXPECT_NEAR(l.rotation, -std::log(kEps), 1e-9);  // floored, finite
    EXPECT_FALSE(l.voxel.has_value());
}

TEST(UnaryLosses, SymmetricRotation) {
    const auto table = default_rotation_codebook();
    const std::vector<double> uniform(24, 1.0 / 24.0);
    EXPECT_NEAR(rotation_loss(uniform, Quat::Identity(), 2, table), std::log(24.0), 1e-12);
    // Mass on the 180-degree copy counts for a 2-fold symmetric object.
    const auto flipped = one_hot(12, 24);
    EXPECT_EQ(rotation_loss(flipped, Quat::Identity(), 2, table), 0.0);
    EXPECT_GT(rotation_loss(flipped, Quat::Identity(), 1, table), 20.0);
    EXPECT_EQ(rotation_loss(one_hot(18, 24), Quat::Identity(), 4, table), 0.0);
}

TEST(UnaryLosses, ScaleInvariantToCommonRescale) {
    const auto table = default_rotation_codebook();
    const GroundTruthObject g = gt_object(Vec3::Zero(), Vec3(0.2, -0.1, 0.4), 0.0);
    UnaryPrediction u;
    u.log_scale = Vec3(0.5, 0.3, -0.2);
    u.rotation_prob = one_hot(0, 24);
    const double a = unary_losses(u, g, table).scale;
    GroundTruthObject g2 = g;
    g2.pose.log_scale += Vec3::Constant(std::log(3.0));
    u.log_scale += Vec3::Constant(std::log(3.0));
    EXPECT_NEAR(unary_losses(u, g2, table).scale, a, 1e-12);
}

TEST(VoxelCrossEntropy, KnownValue) {
    VoxelGrid gt(2), pred(2, 0.5);
    gt.at(0, 0, 0) = 1.0;
    EXPECT_NEAR(voxel_cross_entropy(pred, gt), std::log(2.0), 1e-12);
    EXPECT_THROW(voxel_cross_entropy(VoxelGrid(3), gt), Error);
}

TEST(RelativeLosses, Cases) {
    const auto dirs = default_direction_codebook();
    const Pose a(Vec3(0, 0, 4), Vec3::Zero(), Quat::Identity());
    const Pose b(Vec3(1, 0, 5), Vec3(0.2, 0, 0), yaw_quaternion(0.4));
    const auto gt = relative_ground_truth(0, a, 1, b, dirs);
    const auto zero = relative_losses(gt, gt);
    EXPECT_EQ(zero.translation, 0.0);
    EXPECT_EQ(zero.scale, 0.0);
    EXPECT_EQ(zero.direction, 0.0);

    RelativePrediction p = gt;
    p.rel_translation += Vec3(0, 2, 0);
    const std::size_t bin = argmax_lowest(gt.direction_prob);
    p.direction_prob.assign(24, 0.5 / 23.0);
    p.direction_prob[bin] = 0.5;
    const auto l = relative_losses(p, gt);
    EXPECT_NEAR(l.translation, 4.0, 1e-12);
    EXPECT_NEAR(l.direction, std::log(2.0), 1e-12);
}

TEST(JointLosses, Cases) {
    const auto tables = Codebooks::defaults();
    SceneInstance s;
    GroundTruthObject g = gt_object(Vec3(1, 2, 3), Vec3::Zero(), 0.0);
    s.gt_objects = {g};
    UnaryPrediction u;
    u.translation = g.pose.translation + Vec3(1, 1, 1);
    u.rotation_prob = one_hot(0, 24);
    s.unary = {u};
    const FusedScene f = fuse_scene(s, FusionConfig{}, tables);
    EXPECT_NEAR(joint_losses(f, s.gt_objects).translation, 3.0, 1e-12);

    s.unary[0].translation = g.pose.translation;
    EXPECT_EQ(joint_losses(fuse_scene(s, FusionConfig{}, tables), s.gt_objects).translation, 0.0);
}

TEST(JointLosses, MatchesNormalEquationPath) {
    std::mt19937_64 rng(3);
    const auto tables = Codebooks::defaults();
    const SceneInstance s = random_instance(rng, 4, 6);
    const FusedScene f = fuse_scene(s, FusionConfig{}, tables);
    const auto p = translation_problem(s, FusionConfig{});
    // (I + AᵀA) x = u + Aᵀ r via an explicit inverse.
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(4, 4);
    Eigen::MatrixXd rhs = p.unary;
    for (const auto& e : p.edges) {
        m(static_cast<Eigen::Index>(e.source), static_cast<Eigen::Index>(e.source)) += 1;
        m(static_cast<Eigen::Index>(e.target), static_cast<Eigen::Index>(e.target)) += 1;
        m(static_cast<Eigen::Index>(e.source), static_cast<Eigen::Index>(e.target)) -= 1;
        m(static_cast<Eigen::Index>(e.target), static_cast<Eigen::Index>(e.source)) -= 1;
        rhs.row(static_cast<Eigen::Index>(e.target)) += e.value.transpose();
        rhs.row(static_cast<Eigen::Index>(e.source)) -= e.value.transpose();
    }
    const Eigen::MatrixXd x = m.inverse() * rhs;
    double want = 0.0;
    for (int i = 0; i < 4; ++i) want += (x.row(i).transpose() - s.gt_objects[static_cast<std::size_t>(i)].pose.translation).squaredNorm();
    EXPECT_NEAR(joint_losses(f, s.gt_objects).translation, want, 1e-10);
}

TEST(GradCheckJoint, SingleObject) {
    SceneInstance s;
    s.gt_objects = {gt_object(Vec3(1, 2, 3), Vec3::Zero(), 0.0)};
    UnaryPrediction u;
    u.translation = Vec3(1.5, 1.0, 3.25);
    u.rotation_prob = one_hot(0, 24);
    s.unary = {u};
    for (double lambda : {0.5, 1.0, 3.0}) {
        FusionConfig c;
        c.lambda = lambda;
        const auto p = translation_problem(s, c);
        MatrixX3 target(1, 3);
        target.row(0) = s.gt_objects[0].pose.translation.transpose();
        const auto g = joint_translation_gradient(p, lambda, target);
        EXPECT_LT((g.unary.row(0).transpose() - 2.0 * (u.translation - s.gt_objects[0].pose.translation)).norm(), 1e-12);
        EXPECT_LT(grad_check_joint(s, c, 1e-5), 1e-6);
    }
}

TEST(GradCheckJoint, ZeroResidual) {
    std::mt19937_64 rng(5);
    SceneInstance s = random_instance(rng, 4, 6);
    for (std::size_t i = 0; i < 4; ++i) s.unary[i].translation = s.gt_objects[i].pose.translation;
    for (auto& r : s.relative)
        r.rel_translation = s.gt_objects[static_cast<std::size_t>(r.target_id)].pose.translation -
                            s.gt_objects[static_cast<std::size_t>(r.source_id)].pose.translation;
    const auto p = translation_problem(s, FusionConfig{});
    MatrixX3 target(4, 3);
    for (int i = 0; i < 4; ++i) target.row(i) = s.gt_objects[static_cast<std::size_t>(i)].pose.translation.transpose();
    const auto g = joint_translation_gradient(p, 1.0, target);
    EXPECT_LT(g.unary.cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT(g.relative.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(GradCheckJoint, RandomInstances) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const SceneInstance s = random_instance(rng, 4, 6);
        FusionConfig c;
        c.lambda = std::array<double, 3>{0.5, 1.0, 2.0}[trial % 3];
        EXPECT_LT(grad_check_joint(s, c, 1e-5), 1e-4);
    }
    const SceneInstance s = random_instance(rng, 3, 2);
    EXPECT_THROW(grad_check_joint(s, FusionConfig{}, 1e-2), Error);
    EXPECT_THROW(grad_check_joint(s, FusionConfig{}, 1e-9), Error);
}
