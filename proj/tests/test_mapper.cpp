// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <splatmap/mapper.hpp>

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace splatmap;
using namespace splatmap::testing;

namespace {

Frame constant_frame(const CameraIntrinsics &k, double depth, std::uint8_t label = 3) {
    Frame f = Frame::blank(k, 7);
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            f.depth(x, y) = depth;
            f.semantic(x, y) = label;
            f.rgb(x, y, 0) = x / double(k.width);
            f.rgb(x, y, 1) = y / double(k.height);
            f.rgb(x, y, 2) = 0.25;
        }
    }
    f.pose = PoseSE3::identity();
    return f;
}

Gaussian with_opacity(double o, int n = kDefaultNumClasses) {
    Gaussian g;
    g.opacity_logit = logit(o);
    g.class_scores = Eigen::VectorXd::Zero(n);
    return g;
}

class ShiftOffsets : public OffsetProvider {
  public:
    BlockOffset offset(const Frame &, int, int, double d, int stride) const override {
        BlockOffset o;
        o.dx = stride * 0.5;
        o.dd = 0.01 * d;
        return o;
    }
};

class BadOffsets : public OffsetProvider {
  public:
    BlockOffset offset(const Frame &, int, int, double d, int) const override {
        BlockOffset o;
        o.dd = 0.5 * d;
        return o;
    }
};

} // namespace

TEST(Predict, InvalidDepthGivesNothing) {
    const auto k = make_intrinsics(16, 12, 20.0);
    Frame f = Frame::blank(k);
    EXPECT_TRUE(predict_gaussians(f, k, PoseSE3::identity(), MapperConfig{}).empty());
}

TEST(Predict, OneGaussianPerBlockAtBlockCenters) {
    const auto k = make_intrinsics(8, 8, 100.0);
    const Frame f = constant_frame(k, 1.0);
    const auto p = predict_gaussians(f, k, PoseSE3::identity(), MapperConfig{});
    ASSERT_EQ(p.size(), 4u);
    const std::set<std::pair<int, int>> centers{{2, 2}, {6, 2}, {2, 6}, {6, 6}};
    for (const auto &g : p) {
        EXPECT_TRUE(centers.count({g.x, g.y}));
        EXPECT_LT((g.gaussian.mean - backproject(g.x, g.y, 1.0, k, PoseSE3::identity())).norm(), 1e-15);
        EXPECT_EQ(g.gaussian.epoch, 7);
        EXPECT_EQ(g.gaussian.update_count, 0u);
        EXPECT_NEAR(g.gaussian.opacity(), 0.7, 1e-12);
        EXPECT_EQ(dominant_class(g.gaussian.class_scores), 3);
        EXPECT_EQ(g.gaussian.class_scores.sum(), 1.0);
        for (int c = 0; c < 3; ++c) {
            EXPECT_EQ(g.gaussian.color[c], f.rgb(g.x, g.y, c));
        }
    }
}

TEST(Predict, ScaleFromDepthStrideAndFocal) {
    const auto k = make_intrinsics(32, 24, 100.0);
    const auto p = predict_gaussians(constant_frame(k, 1.0), k, PoseSE3::identity(), MapperConfig{});
    ASSERT_EQ(p.size(), 48u);
    for (const auto &g : p) {
        for (int a = 0; a < 3; ++a) {
            EXPECT_NEAR(g.gaussian.scale()[a], 0.04, 1e-15);
        }
    }
}

TEST(Predict, PartialEdgeBlocksAndUnlabeledPixels) {
    const auto k = make_intrinsics(10, 5, 50.0);
    Frame f = constant_frame(k, 2.0, kUnlabeled);
    const auto p = predict_gaussians(f, k, PoseSE3::identity(), MapperConfig{});
    // ceil(10/4) x ceil(5/4) blocks; the last column is clamped to x = 9.
    ASSERT_EQ(p.size(), 6u);
    EXPECT_EQ(p[2].x, 9);
    EXPECT_EQ(p[3].y, 4);
    for (const auto &g : p) {
        EXPECT_TRUE(g.gaussian.class_scores.isApprox(Eigen::VectorXd::Constant(kDefaultNumClasses, 0.05)));
    }
}

TEST(Predict, OffsetsAreAppliedAndBounded) {
    const auto k = make_intrinsics(8, 8, 100.0);
    const Frame f = constant_frame(k, 1.0);
    const auto p = predict_gaussians(f, k, PoseSE3::identity(), MapperConfig{}, ShiftOffsets{});
    ASSERT_EQ(p.size(), 4u);
    const Vec3 expected = backproject(p[0].x + 2.0, p[0].y, 1.01, k, PoseSE3::identity());
    EXPECT_LT((p[0].gaussian.mean - expected).norm(), 1e-15);
    EXPECT_THROW(predict_gaussians(f, k, PoseSE3::identity(), MapperConfig{}, BadOffsets{}), Error);
}

TEST(Covisibility, EmptyMapIsUncoveredEverywhere) {
    const auto k = make_intrinsics(20, 14, 20.0);
    const auto mask = covisibility_mask(GaussianMap{}, k, PoseSE3::identity(), MapperConfig{});
    for (auto v : mask.data()) {
        EXPECT_EQ(v, 1);
    }
}

TEST(Covisibility, OpaqueWallCoversEverything) {
    const auto k = make_intrinsics(24, 20, 20.0);
    GaussianMap map;
    MapperConfig cfg;
    cfg.stride = 2;
    for (const auto &p : predict_gaussians(constant_frame(k, 1.0), k, PoseSE3::identity(), cfg)) {
        Gaussian g = p.gaussian;
        g.opacity_logit = logit(0.95);
        map.append(g);
    }
    const auto mask = covisibility_mask(map, k, PoseSE3::identity(), cfg);
    for (auto v : mask.data()) {
        EXPECT_EQ(v, 0);
    }
}

TEST(Covisibility, MatchesThresholdedReferenceSilhouette) {
    std::mt19937 rng(17);
    const auto k = make_intrinsics(40, 30, 35.0);
    SceneSpec spec;
    spec.count = 40;
    spec.min_sigma_px = 2.0;
    spec.max_sigma_px = 6.0;
    auto map = random_scene(rng, k, spec);
    // Keep only the left half so the view is half covered.
    map.erase_if([&](const Gaussian &g) { return g.mean.x() / g.mean.z() * k.fx + k.cx > k.width / 2.0; });
    const MapperConfig cfg;
    const auto mask = covisibility_mask(map, k, PoseSE3::identity(), cfg);
    const auto splats = reference_splats(map, k, PoseSE3::identity());
    std::size_t covered = 0;
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            const double s = composite_pixel_reference(splats, Vec2(x, y), map.num_classes()).silhouette;
            EXPECT_EQ(mask(x, y), s < cfg.silhouette_threshold ? 1 : 0) << x << "," << y;
            covered += mask(x, y) == 0;
        }
    }
    EXPECT_GT(covered, 0u);
    EXPECT_LT(covered, static_cast<std::size_t>(k.width * k.height));
}

TEST(Insert, MaskSelectsExactlyTheUncoveredPredictions) {
    const auto k = make_intrinsics(32, 24, 40.0);
    const auto predicted = predict_gaussians(constant_frame(k, 1.5), k, PoseSE3::identity(), MapperConfig{});
    {
        GaussianMap map;
        EXPECT_EQ(insert_new(map, predicted, LabelImage(k.width, k.height, 1, 1)), predicted.size());
        EXPECT_EQ(map.size(), predicted.size());
    }
    {
        GaussianMap map;
        map.append(with_opacity(0.3));
        const GaussianMap before = map;
        EXPECT_EQ(insert_new(map, predicted, LabelImage(k.width, k.height, 1, 0)), 0u);
        EXPECT_TRUE(map.same_contents(before));
    }
    std::mt19937 rng(2);
    std::bernoulli_distribution coin(0.4);
    for (int trial = 0; trial < 10; ++trial) {
        LabelImage mask(k.width, k.height, 1, 0);
        for (auto &v : mask.data()) {
            v = coin(rng) ? 1 : 0;
        }
        GaussianMap map;
        map.append(with_opacity(0.3));
        insert_new(map, predicted, mask);
        std::vector<Gaussian> expected{map[0]};
        for (const auto &p : predicted) {
            if (mask(p.x, p.y)) {
                expected.push_back(p.gaussian);
            }
        }
        ASSERT_EQ(map.size(), expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i) {
            EXPECT_EQ(map[i], expected[i]);
        }
    }
}

TEST(Prune, StrictThresholdKeepsOrder) {
    GaussianMap map;
    for (double o : {0.004, 0.005, 0.5}) {
        map.append(with_opacity(o));
    }
    EXPECT_EQ(prune(map, map.config()), 1u);
    ASSERT_EQ(map.size(), 2u);
    EXPECT_NEAR(map[0].opacity(), 0.005, 1e-15);
    EXPECT_NEAR(map[1].opacity(), 0.5, 1e-15);
    GaussianMap empty;
    EXPECT_EQ(prune(empty, empty.config()), 0u);
}

TEST(Prune, RandomMapMatchesFilterAndIsIdempotent) {
    std::mt19937 rng(8);
    std::uniform_real_distribution<double> lo(-8.0, -3.0);
    GaussianMap map;
    for (int i = 0; i < 500; ++i) {
        Gaussian g = with_opacity(0.5);
        g.opacity_logit = lo(rng);
        g.epoch = i;
        map.append(g);
    }
    std::vector<Gaussian> expected;
    for (const auto &g : map.gaussians()) {
        if (!(g.opacity() < 0.005)) {
            expected.push_back(g);
        }
    }
    prune(map, map.config());
    ASSERT_EQ(map.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_EQ(map[i], expected[i]);
    }
    EXPECT_EQ(prune(map, map.config()), 0u);
}

TEST(Refine, PerfectMapIsAFixedPointButCountsUpdates) {
    std::mt19937 rng(4);
    const auto k = make_intrinsics(32, 32, 30.0);
    auto map = random_scene(rng, k, SceneSpec{});
    const auto r = render(map, k, PoseSE3::identity());
    Frame f = Frame::blank(k);
    f.rgb = r.color;
    f.depth = r.depth; // raw composite so the depth term is exactly zero
    f.pose = PoseSE3::identity();
    const GaussianMap before = map;
    RenderOptions opts;
    opts.retain_for_backward = true;
    const auto contributed = render(map, k, PoseSE3::identity(), opts).contributed();
    const auto rep = refine(map, k, std::span(&f, 1), map.config());
    EXPECT_EQ(rep.loss_before, 0.0);
    EXPECT_EQ(rep.moved, 0u);
    std::size_t expected_updates = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        Gaussian g = map[i];
        EXPECT_EQ(g.update_count, before[i].update_count + (contributed[i] ? 1u : 0u));
        expected_updates += contributed[i];
        g.update_count = before[i].update_count;
        EXPECT_EQ(g, before[i]);
    }
    EXPECT_EQ(rep.updated, expected_updates);
    EXPECT_GT(expected_updates, 0u);
}

TEST(Refine, GatedGaussiansAreBitwiseUnchanged) {
    std::mt19937 rng(5);
    const auto k = make_intrinsics(32, 32, 30.0);
    auto map = random_scene(rng, k, SceneSpec{});
    Frame target = frame_from_render(random_scene(rng, k, SceneSpec{}), k, PoseSE3::identity());
    for (std::size_t i = 0; i < map.size(); i += 2) {
        map.mutable_gaussians()[i].update_count = 8;
    }
    const GaussianMap before = map;
    const auto rep = refine(map, k, std::span(&target, 1), map.config());
    EXPECT_GT(rep.gated, 0u);
    for (std::size_t i = 0; i < map.size(); i += 2) {
        EXPECT_EQ(map[i], before[i]);
    }
}

TEST(Refine, WrongColorMovesTowardTargetAndLossDecreases) {
    const auto k = make_intrinsics(33, 33, 100.0);
    MapperConfig cfg;
    GaussianMap truth(cfg);
    Gaussian g = with_opacity(0.8);
    g.mean = Vec3(0, 0, 1);
    g.log_scale = Vec3::Constant(std::log(0.03));
    g.color = Vec3(0.7, 0.2, 0.4);
    truth.append(g);
    const Frame target = frame_from_render(truth, k, PoseSE3::identity());

    GaussianMap map(cfg);
    g.color = Vec3(0.3, 0.5, 0.4);
    map.append(g);
    const auto rep = refine(map, k, std::span(&target, 1), cfg);
    EXPECT_TRUE(rep.step_accepted);
    EXPECT_LT(rep.loss_after, rep.loss_before);
    EXPECT_GT(map[0].color[0], 0.3);
    EXPECT_LT(map[0].color[1], 0.5);
    EXPECT_EQ(map[0].mean, g.mean);
    EXPECT_EQ(map[0].class_scores, g.class_scores);
    EXPECT_NEAR(map[0].rotation.norm(), 1.0, 1e-12);
}

TEST(Refine, UpdateCountNeverExceedsGate) {
    std::mt19937 rng(6);
    const auto k = make_intrinsics(24, 24, 25.0);
    auto map = random_scene(rng, k, SceneSpec{});
    const Frame target = frame_from_render(random_scene(rng, k, SceneSpec{}), k, PoseSE3::identity());
    const std::size_t n = map.size();
    for (int round = 0; round < 12; ++round) {
        refine(map, k, std::span(&target, 1), map.config());
        EXPECT_EQ(map.size(), n);
        for (const auto &g : map.gaussians()) {
            EXPECT_LE(g.update_count, 8u);
        }
    }
}

TEST(Refine, ViewWithoutPoseIsAnError) {
    const auto k = make_intrinsics(16, 16, 20.0);
    GaussianMap map;
    map.append(with_opacity(0.5));
    Frame f = Frame::blank(k);
    EXPECT_THROW(refine(map, k, std::span(&f, 1), map.config()), Error);
}

TEST(Optimize, SmallCorrectionsAreANoOp) {
    const auto k = make_intrinsics(16, 16, 20.0);
    GaussianMap map;
    map.append(with_opacity(0.5));
    const GaussianMap before = map;
    Frame f = constant_frame(k, 1.0);
    PoseSE3 moved;
    moved.translation = Vec3(0.005, 0, 0);
    const CorrectedFrame c{&f, PoseSE3::identity(), moved};
    const auto rep = one_iteration_optimize(map, k, std::span(&c, 1), map.config());
    EXPECT_TRUE(rep.frames.empty());
    EXPECT_FALSE(rep.applied);
    EXPECT_TRUE(map.same_contents(before));
    EXPECT_TRUE(one_iteration_optimize(map, k, {}, map.config()).frames.empty());
}

TEST(Optimize, TopKRanksByPoseChange) {
    const auto k = make_intrinsics(16, 16, 20.0);
    Frame a = constant_frame(k, 1.0), b = constant_frame(k, 1.0);
    a.index = 1;
    b.index = 2;
    PoseSE3 five, one_cm;
    five.translation = Vec3(0.05, 0, 0);
    one_cm.translation = Vec3(0, 0.011, 0);
    const std::vector<CorrectedFrame> c{{&b, PoseSE3::identity(), one_cm}, {&a, PoseSE3::identity(), five}};
    MapperConfig cfg;
    cfg.topk_frames = 1;
    const auto ranked = rank_corrections(c, cfg);
    ASSERT_EQ(ranked.size(), 1u);
    EXPECT_EQ(c[ranked[0]].frame->index, 1);
    // Rotation alone counts once it exceeds half a degree.
    PoseSE3 turned(Eigen::Quaterniond(Eigen::AngleAxisd(0.6 * M_PI / 180.0, Vec3::UnitY())), Vec3::Zero());
    EXPECT_TRUE(is_significant_change(PoseSE3::identity(), turned, cfg));
    PoseSE3 nudged(Eigen::Quaterniond(Eigen::AngleAxisd(0.4 * M_PI / 180.0, Vec3::UnitY())), Vec3::Zero());
    EXPECT_FALSE(is_significant_change(PoseSE3::identity(), nudged, cfg));
}

TEST(Optimize, ShiftedMapDescendsUnderCorrectedPoses) {
    std::mt19937 rng(12);
    const auto k = make_intrinsics(40, 32, 40.0);
    SceneSpec spec;
    spec.count = 30;
    const auto truth = random_scene(rng, k, spec);
    std::vector<Frame> frames;
    for (int i = 0; i < 3; ++i) {
        PoseSE3 p;
        p.translation = Vec3(0.05 * i, -0.03 * i, 0.0);
        frames.push_back(frame_from_render(truth, k, p, i));
    }
    // The map was built under poses that were 2 cm off.
    GaussianMap map = truth;
    for (auto &g : map.mutable_gaussians()) {
        g.mean += Vec3(0.02, 0.0, 0.0);
    }
    std::vector<CorrectedFrame> corrected;
    for (const auto &f : frames) {
        PoseSE3 old = *f.pose;
        old.translation += Vec3(0.02, 0.0, 0.0);
        corrected.push_back({&f, old, *f.pose});
    }
    const GaussianMap before = map;
    const auto rep = one_iteration_optimize(map, k, corrected, map.config());
    ASSERT_EQ(rep.frames.size(), 3u);
    EXPECT_TRUE(rep.applied);
    EXPECT_LT(rep.loss_after, rep.loss_before);
    // Same views in the order the optimizer used them.
    std::vector<Frame> used;
    std::vector<PoseSE3> poses;
    for (int idx : rep.frames) {
        used.push_back(frames[idx]);
        poses.push_back(*frames[idx].pose);
    }
    EXPECT_EQ(opt_loss(map, k, used, poses), rep.loss_after);
    ASSERT_EQ(map.size(), before.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        EXPECT_EQ(map[i].color, before[i].color);
        EXPECT_EQ(map[i].class_scores, before[i].class_scores);
        EXPECT_EQ(map[i].update_count, before[i].update_count);
    }
}

TEST(Views, OverlapAndSelection) {
    const auto k = make_intrinsics(32, 24, 30.0);
    std::vector<Frame> kfs;
    for (int i = 0; i < 6; ++i) {
        Frame f = constant_frame(k, 2.0);
        f.index = i;
        f.pose = PoseSE3::identity();
        f.pose->translation = Vec3(i < 3 ? 0.1 * i : 50.0, 0, 0);
        kfs.push_back(f);
    }
    EXPECT_DOUBLE_EQ(view_overlap(kfs[0], *kfs[0].pose, k), 1.0);
    EXPECT_DOUBLE_EQ(view_overlap(kfs[0], *kfs[5].pose, k), 0.0);
    Frame cur = constant_frame(k, 2.0);
    cur.index = 9;
    const auto sel = select_supervision_views(cur, kfs, k);
    EXPECT_EQ(sel, (std::vector<std::size_t>{2, 1, 0}));
}

TEST(MapperLifecycle, GrowthBoundAndFullyCoveredReinsertion) {
    std::mt19937 rng(30);
    const auto k = make_intrinsics(48, 40, 40.0);
    SceneSpec spec;
    spec.count = 60;
    spec.min_sigma_px = 3.0;
    spec.max_sigma_px = 8.0;
    spec.min_opacity = 0.9;
    spec.max_opacity = 0.99;
    const auto truth = random_scene(rng, k, spec);
    Mapper mapper(k, MapperConfig{});
    const std::size_t bound = ((k.height + 3) / 4) * ((k.width + 3) / 4);
    for (int i = 0; i < 4; ++i) {
        PoseSE3 p;
        p.translation = Vec3(0.03 * i, 0.0, 0.0);
        const Frame f = frame_from_render(truth, k, p, i);
        const std::size_t before = mapper.map().size();
        const auto rep = mapper.process_keyframe(f);
        EXPECT_LE(rep.map_size, before + bound);
        EXPECT_EQ(rep.map_size, mapper.map().size());
        EXPECT_EQ(rep.supervision.front(), i);
    }
    EXPECT_EQ(mapper.keyframes().size(), 4u);
}
