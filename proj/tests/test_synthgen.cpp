#include <random>

#include <gtest/gtest.h>

#include "relfuse/fusion.hpp"
#include "relfuse/io.hpp"
#include "relfuse/losses.hpp"
#include "relfuse/synthgen.hpp"

using namespace relfuse;

namespace {

LayoutConfig single_object_layout() {
    LayoutConfig l;
    l.categories = {{"box", {0.5, 0.5, 0.5}, {0.8, 0.8, 0.8}, 1, PrimitiveKind::box, 1.0, 1}};
    l.min_objects = l.max_objects = 1;
    return l;
}

double horizontal_distance(const Vec3& a, const Vec3& b) { return std::hypot(a.x() - b.x(), a.z() - b.z()); }

}  // namespace

TEST(SampleScene, SingleObjectInsideRoom) {
    const auto l = single_object_layout();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = sample_scene(l, seed);
        ASSERT_EQ(s.gt_objects.size(), 1u);
        const Vec3& t = s.gt_objects[0].pose.translation;
        EXPECT_GE(t.x(), l.room_x_min);
        EXPECT_LE(t.x(), l.room_x_max);
        EXPECT_GE(t.z(), l.room_z_min);
        EXPECT_LE(t.z(), l.room_z_max);
        EXPECT_TRUE(s.unary.empty());
        EXPECT_TRUE(s.relative.empty());
    }
}

TEST(SampleScene, Deterministic) {
    const auto l = LayoutConfig::benchmark();
    for (std::uint64_t seed : {0ULL, 17ULL, 123456789ULL}) {
        const std::string a = io::dump_json(io::to_json(sample_scene(l, seed)));
        const std::string b = io::dump_json(io::to_json(sample_scene(l, seed)));
        EXPECT_EQ(a, b);
    }
    EXPECT_NE(io::dump_json(io::to_json(sample_scene(l, 1))), io::dump_json(io::to_json(sample_scene(l, 2))));
}

TEST(SampleScene, ConstraintsHoldByExhaustiveScan) {
    const auto l = LayoutConfig::defaults();
    std::size_t chair_checks = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const auto s = sample_scene(l, seed);
        ASSERT_GE(static_cast<int>(s.gt_objects.size()), l.min_objects);
        ASSERT_LE(static_cast<int>(s.gt_objects.size()), l.max_objects);
        const GroundTruthObject* table = nullptr;
        for (const auto& o : s.gt_objects)
            if (o.category == "table" && !table) table = &o;
        for (const auto& o : s.gt_objects) {
            EXPECT_TRUE(in_frustum(o.pose, l.camera)) << "seed " << seed;
            const Vec3 e = o.pose.extents();
            const auto& spec = l.category(o.category);
            for (int d = 0; d < 3; ++d) {
                EXPECT_GE(e[d], spec.extent_min[d] - 1e-12);
                EXPECT_LE(e[d], spec.extent_max[d] + 1e-12);
            }
            if (o.category == "chair" && table) {
                const double d = horizontal_distance(o.pose.translation, table->pose.translation);
                EXPECT_GE(d, 0.4 - 1e-9) << "seed " << seed;
                EXPECT_LE(d, 1.0 + 1e-9) << "seed " << seed;
                // Facing: the chair's front points at the table.
                const Vec3 front = o.pose.rotation * Vec3::UnitZ();
                Vec3 to = table->pose.translation - o.pose.translation;
                to.y() = 0.0;
                EXPECT_GT(front.dot(to.normalized()), 0.999);
                ++chair_checks;
            }
        }
        // Footprints never overlap.
        for (std::size_t i = 0; i < s.gt_objects.size(); ++i)
            for (std::size_t k = i + 1; k < s.gt_objects.size(); ++k) {
                const auto& a = s.gt_objects[i].pose;
                const auto& b = s.gt_objects[k].pose;
                const auto fa = detail::footprint(a.translation, a.extents(), yaw_of(a.rotation));
                const auto fb = detail::footprint(b.translation, b.extents(), yaw_of(b.rotation));
                EXPECT_FALSE(fa.overlaps(fb)) << "seed " << seed;
            }
    }
    EXPECT_GT(chair_checks, 100u);
}

TEST(SampleScene, InfeasibleLayout) {
    LayoutConfig l = single_object_layout();
    l.categories[0].extent_min = l.categories[0].extent_max = Vec3(20, 1, 1);
    try {
        sample_scene(l, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "layout infeasible");
    }
    LayoutConfig bad = single_object_layout();
    bad.room_x_max = std::numeric_limits<double>::infinity();
    EXPECT_THROW(sample_scene(bad, 1), Error);
}

TEST(CorruptUnary, NoiselessLimit) {
    const auto tables = Codebooks::defaults();
    const auto s = sample_scene(LayoutConfig::benchmark(), 4);
    Rng rng(1);
    for (const auto& g : s.gt_objects) {
        const auto u = corrupt_unary(g, NoiseProfile::noiseless(), tables.rotation, rng);
        EXPECT_EQ(u.translation, g.pose.translation);
        EXPECT_EQ(u.log_scale, g.pose.log_scale);
        const std::size_t bin = tables.rotation.nearest(g.pose.rotation);
        EXPECT_EQ(u.rotation_prob, one_hot(bin, tables.rotation.size()));
        const auto l = unary_losses(u, g, tables.rotation);
        EXPECT_EQ(l.translation, 0.0);
    }
}

TEST(CorruptUnary, TranslationMoments) {
    const auto tables = Codebooks::defaults();
    GroundTruthObject g;
    g.pose = Pose(Vec3(1, 2, 3), Vec3::Zero(), Quat::Identity());
    NoiseProfile n;
    n.sigma_t_unary = 0.4;
    Rng rng(99);
    const int draws = 10000;
    Vec3 sum = Vec3::Zero(), sq = Vec3::Zero();
    double score_sum = 0.0;
    for (int i = 0; i < draws; ++i) {
        const auto u = corrupt_unary(g, n, tables.rotation, rng);
        const Vec3 d = u.translation - g.pose.translation;
        sum += d;
        sq += d.cwiseAbs2();
        score_sum += u.score;
        ASSERT_GT(u.score, 0.0);
        ASSERT_LT(u.score, 1.0);
    }
    const Vec3 mean = sum / draws;
    for (int a = 0; a < 3; ++a) {
        const double sd = std::sqrt(sq[a] / draws - mean[a] * mean[a]);
        EXPECT_NEAR(sd, 0.4, 0.02) << "axis " << a;
    }
    EXPECT_NEAR(score_sum / draws, 0.8, 0.01);  // Beta(8,2) mean
}

TEST(CorruptUnary, TemperatureLimits) {
    const auto tables = Codebooks::defaults();
    GroundTruthObject g;
    g.pose = Pose(Vec3::Zero(), Vec3::Zero(), yaw_quaternion(0.3));
    NoiseProfile n;
    n.rotation_flip_prob = 0.0;
    n.rotation_unary_temp = 1e6;
    Rng rng(2);
    const auto u = corrupt_unary(g, n, tables.rotation, rng);
    const auto [lo, hi] = std::minmax_element(u.rotation_prob.begin(), u.rotation_prob.end());
    EXPECT_LT(*hi - *lo, 1e-3);
    n.rotation_unary_temp = 0.1;
    const auto sharp = corrupt_unary(g, n, tables.rotation, rng);
    EXPECT_EQ(argmax_lowest(sharp.rotation_prob), tables.rotation.nearest(g.pose.rotation));
    double total = 0.0;
    for (double p : sharp.rotation_prob) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(CorruptUnary, FlipRate) {
    const auto tables = Codebooks::defaults();
    GroundTruthObject g;
    g.pose = Pose(Vec3::Zero(), Vec3::Zero(), Quat::Identity());
    NoiseProfile n;
    n.rotation_flip_prob = 0.3;
    n.rotation_unary_temp = 0.0;
    Rng rng(5);
    int off = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
        off += argmax_lowest(corrupt_unary(g, n, tables.rotation, rng).rotation_prob) != 0;
    // A flip lands back on the true bin with probability 1/24.
    EXPECT_NEAR(static_cast<double>(off) / draws, 0.3 * 23.0 / 24.0, 0.015);
}

TEST(CorruptRelative, KappaLimits) {
    const auto tables = Codebooks::defaults();
    const Pose a(Vec3(0, 0, 4), Vec3::Zero(), yaw_quaternion(0.2));
    const Pose b(Vec3(1.3, 0.2, 5.1), Vec3(0.1, 0, 0), yaw_quaternion(1.1));
    Rng rng(3);
    NoiseProfile n = NoiseProfile::noiseless();
    const auto exact = corrupt_relative(0, a, 1, b, n, tables.direction, rng);
    EXPECT_EQ(exact.direction_prob, one_hot(quantize_direction(true_direction(a, b), tables.direction), 24));
    n.direction_kappa = 1e-12;
    const auto flat = corrupt_relative(0, a, 1, b, n, tables.direction, rng);
    for (double p : flat.direction_prob) EXPECT_NEAR(p, 1.0 / 24.0, 1e-6);
    EXPECT_THROW(corrupt_relative(0, a, 1, a, n, tables.direction, rng), Error);
}

TEST(CorruptRelative, ArgmaxAtKappa8) {
    const auto tables = Codebooks::defaults();
    std::mt19937_64 geo(8);
    std::normal_distribution<double> g;
    NoiseProfile n;
    n.direction_kappa = 8.0;
    Rng rng(4);
    int hits = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const Pose a(Vec3(g(geo), g(geo), 5 + g(geo)), Vec3::Zero(), yaw_quaternion(g(geo)));
        const Pose b(Vec3(g(geo), g(geo), 5 + g(geo)), Vec3::Zero(), yaw_quaternion(g(geo)));
        const auto r = corrupt_relative(0, a, 1, b, n, tables.direction, rng);
        hits += argmax_lowest(r.direction_prob) == quantize_direction(true_direction(a, b), tables.direction);
    }
    EXPECT_GT(hits, draws * 99 / 100);
}

TEST(CorruptRelative, AntisymmetricNoiseHasZeroMean) {
    const auto tables = Codebooks::defaults();
    const Pose a(Vec3(0, 0, 4), Vec3::Zero(), Quat::Identity());
    const Pose b(Vec3(1, 0, 6), Vec3(0.3, 0, 0), yaw_quaternion(0.5));
    NoiseProfile n;
    n.sigma_t_rel = 0.2;
    Rng rng(6);
    Vec3 sum = Vec3::Zero();
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const auto mn = corrupt_relative(0, a, 1, b, n, tables.direction, rng);
        const auto nm = corrupt_relative(1, b, 0, a, n, tables.direction, rng);
        sum += mn.rel_translation + nm.rel_translation;
    }
    // Sum of two independent N(0, 0.2²) per axis; 5 standard errors.
    EXPECT_LT((sum / draws).cwiseAbs().maxCoeff(), 5.0 * 0.2 * std::sqrt(2.0 / draws));
}

TEST(VoxelizePrimitive, BoxAndEllipsoid) {
    const auto box = voxelize_primitive(PrimitiveKind::box);
    EXPECT_EQ(box.resolution, 32);
    for (double v : box.occupancy) EXPECT_EQ(v, 1.0);
    const auto ell = voxelize_primitive(PrimitiveKind::ellipsoid);
    double occupied = 0.0;
    for (double v : ell.occupancy) occupied += v;
    const double frac = occupied / std::pow(32.0, 3);
    EXPECT_NEAR(frac, kPi / 6.0, 0.03 * kPi / 6.0);
    EXPECT_DOUBLE_EQ(voxel_iou(box, ell), frac);
    // Direct cell-center count.
    std::size_t inside = 0;
    for (int z = 0; z < 32; ++z)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const double cx = (x + 0.5) / 32 - 0.5, cy = (y + 0.5) / 32 - 0.5, cz = (z + 0.5) / 32 - 0.5;
                inside += cx * cx + cy * cy + cz * cz <= 0.25;
            }
    EXPECT_EQ(static_cast<double>(inside), occupied);
}

TEST(ProjectBox, HandPinhole) {
    const Camera cam;
    GroundTruthObject g;
    g.pose = Pose(Vec3(0, 0, 5), Vec3::Zero(), Quat::Identity());
    // Corners at x, y = ±0.5, z in {4.5, 5.5}: extreme at z = 4.5 -> ±55.6 px.
    const Box2d b = project_box(g, cam);
    EXPECT_NEAR(b.xmin, 320 - 500 * 0.5 / 4.5, 1e-9);
    EXPECT_NEAR(b.xmax, 320 + 500 * 0.5 / 4.5, 1e-9);
    EXPECT_NEAR(b.ymin, 240 - 500 * 0.5 / 4.5, 1e-9);
    EXPECT_NEAR(b.ymax, 240 + 500 * 0.5 / 4.5, 1e-9);
    // A flat square at z = 5 gives exactly the ±50 px box.
    GroundTruthObject flat;
    flat.pose = Pose(Vec3(0, 0, 5), Vec3(0, 0, std::log(1e-9)), Quat::Identity());
    const Box2d f = project_box(flat, cam);
    EXPECT_NEAR(f.xmin, 270, 1e-6);
    EXPECT_NEAR(f.ymin, 190, 1e-6);
    EXPECT_NEAR(f.xmax, 370, 1e-6);
    EXPECT_NEAR(f.ymax, 290, 1e-6);

    GroundTruthObject far = flat;
    far.pose.translation.z() = 10;
    EXPECT_NEAR(project_box(far, cam).width(), f.width() / 2, 1.0);
    EXPECT_NEAR(0.5 * (b.xmin + b.xmax), cam.cx, 1e-9);

    GroundTruthObject behind;
    behind.pose = Pose(Vec3(0, 0, 0.2), Vec3::Zero(), Quat::Identity());
    EXPECT_THROW(project_box(behind, cam), Error);

    GroundTruthObject wide;
    wide.pose = Pose(Vec3(0, 0, 2), Vec3(std::log(10.0), 0, 0), Quat::Identity());
    const Box2d c = project_box(wide, cam);
    EXPECT_EQ(c.xmin, 0.0);
    EXPECT_EQ(c.xmax, 640.0);
}

TEST(MakeDataset, Basics) {
    const auto l = LayoutConfig::benchmark();
    const auto n = NoiseProfile::benchmark();
    EXPECT_TRUE(make_dataset(l, n, 0, 1, FusionMode::gt_box).empty());
    const auto a = make_dataset(l, n, 5, 42, FusionMode::detection);
    const auto b = make_dataset(l, n, 5, 42, FusionMode::detection, Codebooks::defaults(), 3);
    ASSERT_EQ(a.size(), 5u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].scene_id, scene_name(i));
        EXPECT_EQ(io::dump_json(io::to_json(a[i])), io::dump_json(io::to_json(b[i])));
        const std::size_t n_obj = a[i].unary.size();
        EXPECT_EQ(a[i].relative.size(), n_obj * (n_obj - 1));
    }
    EXPECT_EQ(scene_seed(42, 3), splitmix64(45));
    const auto gt = make_dataset(l, n, 20, 42, FusionMode::gt_box);
    for (const auto& s : gt) EXPECT_EQ(s.unary.size(), s.gt_objects.size());
}

TEST(MakeDataset, SpuriousRate) {
    const auto l = LayoutConfig::benchmark();
    NoiseProfile n;
    n.fp_rate = 2.0;
    const auto d = make_dataset(l, n, 1000, 7, FusionMode::detection);
    std::size_t spurious = 0;
    double fp_score = 0.0;
    for (const auto& s : d)
        for (const auto& u : s.unary)
            if (u.id >= kSpuriousIdBase) {
                ++spurious;
                fp_score += u.score;
            }
    EXPECT_NEAR(static_cast<double>(spurious) / 1000.0, 2.0, 0.2);
    EXPECT_NEAR(fp_score / static_cast<double>(spurious), 0.2, 0.02);  // Beta(2,8) mean
}

TEST(MakeDataset, NoiselessFusionRecoversTruth) {
    const auto tables = Codebooks::defaults();
    const auto d = make_dataset(LayoutConfig::defaults(), NoiseProfile::noiseless(), 30, 11, FusionMode::gt_box);
    for (const auto& s : d) {
        const FusedScene f = fuse_scene(s, FusionConfig{}, tables);
        ASSERT_EQ(f.objects.size(), s.gt_objects.size());
        for (std::size_t i = 0; i < f.objects.size(); ++i) {
            EXPECT_LT((f.objects[i].translation - s.gt_objects[i].pose.translation).cwiseAbs().maxCoeff(), 1e-9);
            EXPECT_LT((f.objects[i].log_scale - s.gt_objects[i].pose.log_scale).cwiseAbs().maxCoeff(), 1e-9);
        }
    }
}
