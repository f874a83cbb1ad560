#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "relfuse/metrics.hpp"
#include "relfuse/synthgen.hpp"

using namespace relfuse;

namespace {

GroundTruthObject gt_at(int id, const Vec3& t, double yaw = 0.0, int sym = 1) {
    GroundTruthObject g;
    g.id = id;
    g.pose = Pose(t, Vec3::Zero(), yaw_quaternion(yaw));
    g.symmetry_order = sym;
    g.box2d = {100, 100, 200, 200};
    g.shape = primitive_grid(PrimitiveKind::box);
    return g;
}

Estimate perfect(const GroundTruthObject& g, double score) {
    return {g.id, g.pose.translation, g.pose.log_scale, g.pose.rotation, g.box2d, g.shape, score};
}

}  // namespace

TEST(TranslationError, Cases) {
    EXPECT_EQ(translation_error(Vec3(1, 2, 3), Vec3(1, 2, 3)), 0.0);
    EXPECT_EQ(translation_error(Vec3(3, 4, 0), Vec3::Zero()), 5.0);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int i = 0; i < 100; ++i) {
        const Vec3 a(g(rng), g(rng), g(rng)), b(g(rng), g(rng), g(rng));
        const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
        EXPECT_NEAR(translation_error(a, b), std::sqrt(dx * dx + dy * dy + dz * dz), 1e-14);
    }
}

TEST(ScaleError, Cases) {
    const Vec3 gt(0.5, 1.2, 2.0);
    EXPECT_EQ(scale_error(gt, gt), 0.0);
    EXPECT_DOUBLE_EQ(scale_error(2.0 * gt, gt), 1.0);
    EXPECT_DOUBLE_EQ(scale_error(Vec3(1.0, 1.2, 2.0), gt), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(scale_error(gt, 2.0 * gt), scale_error(2.0 * gt, gt));
    EXPECT_THROW(scale_error(Vec3(0, 1, 1), gt), Error);
    EXPECT_NEAR(scale_error_from_log(gt.array().log(), (2.0 * gt).array().log()), 1.0, 1e-15);
}

TEST(RotationError, Cases) {
    const Quat a = yaw_quaternion(0.3);
    EXPECT_NEAR(rotation_error(a, a), 0.0, 1e-6);
    EXPECT_NEAR(rotation_error(yaw_quaternion(deg2rad(90)), Quat::Identity(), 1), 90.0, 1e-9);
    EXPECT_NEAR(rotation_error(yaw_quaternion(deg2rad(90)), Quat::Identity(), 4), 0.0, 1e-6);
    EXPECT_NEAR(rotation_error(yaw_quaternion(deg2rad(180)), Quat::Identity(), 1), 180.0, 1e-9);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    for (int i = 0; i < 200; ++i) {
        const Quat p = Quat(g(rng), g(rng), g(rng), g(rng)).normalized();
        const Quat q = Quat(g(rng), g(rng), g(rng), g(rng)).normalized();
        const double e = rotation_error(p, q);
        EXPECT_GE(e, 0.0);
        EXPECT_LE(e, 180.0);
        EXPECT_NEAR(e, rotation_error(q, p), 1e-9);
        // Matrix form: angle = acos((tr(PᵀQ) - 1) / 2).
        const double c = ((p.toRotationMatrix().transpose() * q.toRotationMatrix()).trace() - 1.0) / 2.0;
        EXPECT_NEAR(e, rad2deg(std::acos(std::clamp(c, -1.0, 1.0))), 1e-6);
    }
}

TEST(VoxelIou, Cases) {
    VoxelGrid a(8), b(8);
    EXPECT_EQ(voxel_iou(a, b), 1.0);
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                if (x < 4) a.at(x, y, z) = 1.0;
                if (x >= 2 && x < 6) b.at(x, y, z) = 0.7;
            }
    EXPECT_EQ(voxel_iou(a, a), 1.0);
    // Brute-force counts: |a|=256, |b|=256, overlap x in {2,3} -> 128.
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.occupancy.size(); ++i) {
        inter += a.occupancy[i] >= 0.5 && b.occupancy[i] >= 0.5;
        uni += a.occupancy[i] >= 0.5 || b.occupancy[i] >= 0.5;
    }
    EXPECT_DOUBLE_EQ(voxel_iou(a, b), static_cast<double>(inter) / static_cast<double>(uni));
    EXPECT_DOUBLE_EQ(voxel_iou(a, b), 128.0 / 384.0);
    VoxelGrid c(8);
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 6; x < 8; ++x) c.at(x, y, z) = 1.0;
    EXPECT_EQ(voxel_iou(a, c), 0.0);
    EXPECT_THROW(voxel_iou(a, VoxelGrid(4)), Error);
}

TEST(Box2dIou, Cases) {
    const Box2d a{0, 0, 1, 1};
    EXPECT_EQ(box2d_iou(a, a), 1.0);
    EXPECT_EQ(box2d_iou(a, {2, 2, 3, 3}), 0.0);
    EXPECT_DOUBLE_EQ(box2d_iou(a, {0.5, 0, 1.5, 1}), 1.0 / 3.0);
}

TEST(IsTruePositive, Cases) {
    const Thresholds th;
    const auto g = gt_at(0, Vec3(0, 0, 5));
    EXPECT_TRUE(is_true_positive(perfect(g, 1.0), g, th, CriteriaMask::all()));
    Estimate off = perfect(g, 1.0);
    off.translation += Vec3(0.6, 0, 0);
    EXPECT_FALSE(is_true_positive(off, g, th, CriteriaMask::parse("trans")));
    EXPECT_TRUE(is_true_positive(off, g, th, CriteriaMask::parse("box2d+rot")));

    // 209 degrees from gt is 29 degrees from its 180-degree symmetric copy.
    const auto sym = gt_at(1, Vec3(0, 0, 5), 0.0, 2);
    Estimate rot = perfect(sym, 1.0);
    rot.rotation = yaw_quaternion(deg2rad(209.0));
    EXPECT_NEAR(rotation_error(rot.rotation, sym.pose.rotation, 2), 29.0, 1e-9);
    EXPECT_TRUE(is_true_positive(rot, sym, th, CriteriaMask::parse("rot")));
    EXPECT_FALSE(is_true_positive(rot, gt_at(1, Vec3(0, 0, 5)), th, CriteriaMask::parse("rot")));

    Estimate no_shape = perfect(g, 1.0);
    no_shape.shape = nullptr;
    EXPECT_THROW(is_true_positive(no_shape, g, th, CriteriaMask::parse("shape")), Error);
    EXPECT_TRUE(is_true_positive(no_shape, g, th, CriteriaMask::parse("trans+rot")));
}

TEST(CriteriaMask, ParseAndName) {
    EXPECT_EQ(CriteriaMask::parse("all").name(), "all");
    EXPECT_EQ(CriteriaMask::parse("trans+box2d").name(), "box2d+trans");
    EXPECT_THROW(CriteriaMask::parse("box2d+color"), Error);
    const auto d = default_criteria();
    ASSERT_EQ(d.size(), 4u);
    EXPECT_EQ(d[0].name(), "all");
    EXPECT_EQ(d[1].name(), "box2d+trans");
    EXPECT_EQ(d[2].name(), "box2d+rot");
    EXPECT_EQ(d[3].name(), "box2d+scale");
}

TEST(DetectionAp, HandCases) {
    const Thresholds th;
    const auto g = gt_at(0, Vec3(0, 0, 5));
    std::vector<SceneDetections> one = {{{perfect(g, 0.9)}, {g}}};
    EXPECT_EQ(detection_ap(one, th, CriteriaMask::all()).ap, 1.0);

    Estimate fp = perfect(g, 0.8);
    fp.id = 7;
    fp.translation += Vec3(3, 0, 0);
    std::vector<SceneDetections> two = {{{perfect(g, 0.9), fp}, {g}}};
    const auto r = detection_ap(two, th, CriteriaMask::all());
    EXPECT_EQ(r.ap, 1.0);
    ASSERT_EQ(r.curve.size(), 2u);
    EXPECT_TRUE(r.curve[0].true_positive);
    EXPECT_FALSE(r.curve[1].true_positive);
    EXPECT_DOUBLE_EQ(r.curve[1].precision, 0.5);

    // FP ranked first: precision 1/2 at recall 1.
    fp.score = 0.95;
    std::vector<SceneDetections> swapped = {{{perfect(g, 0.9), fp}, {g}}};
    EXPECT_DOUBLE_EQ(detection_ap(swapped, th, CriteriaMask::all()).ap, 0.5);

    std::vector<SceneDetections> empty = {{{perfect(g, 0.9)}, {}}};
    try {
        detection_ap(empty, th, CriteriaMask::all());
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "empty ground truth");
    }
}

TEST(DetectionAp, ThreePredsTwoGts) {
    const Thresholds th;
    const auto g0 = gt_at(0, Vec3(0, 0, 5));
    const auto g1 = gt_at(1, Vec3(2, 0, 6));
    Estimate a = perfect(g0, 0.9), b = perfect(g1, 0.5), c = perfect(g1, 0.7);
    c.id = 5;
    c.translation += Vec3(1, 0, 0);  // misses both
    std::vector<SceneDetections> s = {{{a, b, c}, {g0, g1}}};
    // Ranks: a TP (1/1, r .5), c FP (1/2, r .5), b TP (2/3, r 1).
    const double want = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
    EXPECT_DOUBLE_EQ(detection_ap(s, th, CriteriaMask::parse("trans")).ap, want);
    std::vector<std::vector<bool>> match = {{true, false}, {false, true}, {false, false}};
    EXPECT_DOUBLE_EQ(oracle::brute_force_ap(match, {0.9, 0.5, 0.7}, 2), want);
}

TEST(DetectionAp, MatchesBruteForceOracle) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const Thresholds th;
    const CriteriaMask mask = CriteriaMask::parse("trans");
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n_gt = 1 + rng() % 4, n_pred = rng() % 7;
        std::vector<GroundTruthObject> gts;
        for (std::size_t i = 0; i < n_gt; ++i) gts.push_back(gt_at(static_cast<int>(i), Vec3(3.0 * i, 0, 5)));
        std::vector<Estimate> preds;
        std::vector<double> scores;
        for (std::size_t k = 0; k < n_pred; ++k) {
            const std::size_t near = rng() % n_gt;
            Estimate e = perfect(gts[near], std::round(u01(rng) * 10) / 10);  // ties happen
            e.id = static_cast<int>(k);
            e.translation += Vec3(u01(rng) * 0.9, 0, 0);
            preds.push_back(e);
            scores.push_back(e.score);
        }
        std::vector<std::vector<bool>> match(n_pred, std::vector<bool>(n_gt));
        for (std::size_t k = 0; k < n_pred; ++k)
            for (std::size_t g = 0; g < n_gt; ++g)
                match[k][g] = (preds[k].translation - gts[g].pose.translation).norm() <= th.delta_t;
        std::vector<SceneDetections> s = {{preds, gts}};
        EXPECT_NEAR(detection_ap(s, th, mask).ap, oracle::brute_force_ap(match, scores, n_gt), 1e-12);
    }
}

TEST(DetectionAp, Properties) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const Thresholds th;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<SceneDetections> scenes(3);
        for (auto& s : scenes) {
            for (int i = 0; i < 3; ++i) s.gts.push_back(gt_at(i, Vec3(3.0 * i, 0, 5), 0.0, 1));
            for (int i = 0; i < 4; ++i) {
                Estimate e = perfect(s.gts[static_cast<std::size_t>(i % 3)], u01(rng));
                e.id = i;
                e.translation += Vec3(u01(rng), 0, 0) * 0.8;
                e.rotation = yaw_quaternion(deg2rad(60.0 * u01(rng)));
                e.log_scale = Vec3::Constant(0.3 * u01(rng));
                s.preds.push_back(e);
            }
        }
        const double all = detection_ap(scenes, th, CriteriaMask::parse("box2d+trans+rot+scale")).ap;
        for (const char* sub : {"box2d+trans", "box2d+rot", "box2d+scale", "trans"})
            EXPECT_LE(all, detection_ap(scenes, th, CriteriaMask::parse(sub)).ap + 1e-15);
        // Monotone score transform.
        auto squashed = scenes;
        for (auto& s : squashed)
            for (auto& e : s.preds) e.score = e.score * e.score;
        EXPECT_DOUBLE_EQ(detection_ap(scenes, th, CriteriaMask::parse("trans")).ap,
                         detection_ap(squashed, th, CriteriaMask::parse("trans")).ap);
        const auto curve = detection_ap(scenes, th, CriteriaMask::parse("trans")).curve;
        for (std::size_t i = 1; i < curve.size(); ++i)
            EXPECT_LE(curve[i].interpolated_precision, curve[i - 1].interpolated_precision);
    }
}

TEST(SceneErrorStats, Cases) {
    SceneInstance s;
    s.gt_objects = {gt_at(0, Vec3(0, 0, 5)), gt_at(1, Vec3(2, 0, 6), 0.0, 4)};
    FusedScene f;
    for (const auto& g : s.gt_objects) {
        FusedObject o;
        o.id = g.id;
        o.translation = g.pose.translation;
        o.log_scale = g.pose.log_scale;
        o.rotation = g.pose.rotation;
        o.shape = g.shape;
        f.objects.push_back(o);
    }
    const std::vector<FusedScene> fs = {f};
    const std::vector<SceneInstance> ss = {s};
    auto rep = scene_error_stats(fs, ss, Thresholds{});
    EXPECT_EQ(rep.translation.median, 0.0);
    EXPECT_EQ(rep.scale.median, 0.0);
    EXPECT_EQ(rep.translation.pct_within, 100.0);
    EXPECT_EQ(rep.rotation.pct_within, 100.0);
    ASSERT_TRUE(rep.shape.has_value());
    EXPECT_EQ(rep.shape->median, 1.0);

    std::vector<FusedScene> one = {f};
    one[0].objects.resize(1);
    one[0].objects[0].translation += Vec3(0.3, 0.4, 0.0);
    one[0].objects[0].rotation = yaw_quaternion(deg2rad(40.0));
    auto single = scene_error_stats(one, ss, Thresholds{});
    EXPECT_NEAR(single.translation.median, 0.5, 1e-12);
    EXPECT_NEAR(single.translation.mean, 0.5, 1e-12);
    EXPECT_NEAR(single.rotation.median, 40.0, 1e-9);
    EXPECT_EQ(single.rotation.pct_within, 0.0);
    EXPECT_EQ(single.translation.count, 1u);
}

TEST(SceneErrorStats, MatchesBatchRecomputation) {
    const auto tables = Codebooks::defaults();
    const auto scenes = make_dataset(LayoutConfig::benchmark(), NoiseProfile::benchmark(), 40, 3, FusionMode::gt_box);
    std::vector<FusedScene> fused;
    for (const auto& s : scenes) fused.push_back(fuse_scene(s, FusionConfig{}, tables));
    const auto rep = scene_error_stats(fused, scenes, Thresholds{});
    std::vector<double> e;
    double sum = 0.0;
    for (std::size_t i = 0; i < scenes.size(); ++i)
        for (std::size_t k = 0; k < scenes[i].gt_objects.size(); ++k) {
            const Vec3 d = fused[i].objects[k].translation - scenes[i].gt_objects[k].pose.translation;
            e.push_back(std::sqrt(d.dot(d)));
            sum += e.back();
        }
    std::sort(e.begin(), e.end());
    const double median = e.size() % 2 ? e[e.size() / 2] : 0.5 * (e[e.size() / 2 - 1] + e[e.size() / 2]);
    EXPECT_NEAR(rep.translation.median, median, 1e-12);
    EXPECT_NEAR(rep.translation.mean, sum / static_cast<double>(e.size()), 1e-12);
    EXPECT_EQ(rep.translation.count, e.size());
}

TEST(Thresholds, Defaults) {
    const Thresholds t;
    EXPECT_EQ(t.delta_t, 0.5);
    EXPECT_EQ(t.delta_s, 0.2);
    EXPECT_EQ(t.delta_q, 30.0);
    EXPECT_EQ(t.delta_V, 0.25);
    EXPECT_EQ(t.delta_b, 0.5);
    Thresholds bad;
    bad.delta_t = -1.0;
    EXPECT_THROW(bad.validate(), Error);
}
