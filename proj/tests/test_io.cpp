// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#include "temp_dir.hpp"
#include "test_support.hpp"

#include <splatmap/io/dataset.hpp>
#include <splatmap/io/ply.hpp>
#include <splatmap/io/snapshot.hpp>

#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

using namespace splatmap;
using namespace splatmap::testing;
namespace fs = std::filesystem;

namespace {

GaussianMap random_map(std::uint32_t seed, int count) {
    std::mt19937 rng(seed);
    const auto k = make_intrinsics(32, 32, 30.0);
    SceneSpec spec;
    spec.count = count;
    auto map = random_scene(rng, k, spec);
    auto &gs = map.mutable_gaussians();
    for (std::size_t i = 0; i < gs.size(); ++i) {
        gs[i].update_count = static_cast<std::uint32_t>(i % 9);
        gs[i].epoch = -3 + static_cast<std::int64_t>(i) * 1000000007LL;
    }
    return map;
}

void write_depth_png(const fs::path &p, int w, int h, std::uint16_t v) {
    fs::create_directories(p.parent_path());
    cv::imwrite(p.string(), cv::Mat(h, w, CV_16UC1, cv::Scalar(v)));
}

void write_color_png(const fs::path &p, int w, int h, cv::Vec3b bgr) {
    fs::create_directories(p.parent_path());
    cv::imwrite(p.string(), cv::Mat(h, w, CV_8UC3, cv::Scalar(bgr[0], bgr[1], bgr[2])));
}

} // namespace

// ---- config ----------------------------------------------------------------

TEST(ConfigFile, ParsesKeysCommentsAndRoundTrips) {
    std::istringstream in("# comment\n\nstride = 2   # trailing\nmode=icp\nrefine_step=0.01\nmax_updates=3\n");
    const auto c = io::parse_config(in);
    EXPECT_EQ(c.mapper.stride, 2);
    EXPECT_EQ(c.tracker.mode, TrackerMode::icp);
    EXPECT_EQ(c.mapper.refine_step, 0.01);
    EXPECT_EQ(c.mapper.max_updates, 3);
    EXPECT_EQ(c.mapper.topk_frames, MapperConfig{}.topk_frames);

    std::istringstream again(io::to_text(c));
    EXPECT_EQ(io::parse_config(again), c);
}

TEST(ConfigFile, ErrorsCarryLineNumbers) {
    const auto message = [](const std::string &text) {
        std::istringstream in(text);
        try {
            io::parse_config(in, "cfg");
        } catch (const Error &e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_EQ(message("stride=2\nbogus=1\n"), "cfg:2: unknown key 'bogus'");
    EXPECT_EQ(message("\n\nstride=two\n"), "cfg:3: invalid number 'two'");
    EXPECT_EQ(message("stride\n"), "cfg:1: expected key=value");
    EXPECT_EQ(message("mode=slam\n"), "cfg:1: mode must be gt or icp");
    EXPECT_EQ(message("stride=0\n"), "config: stride must be >= 1");
}

// ---- trajectories ------------------------------------------------------------

TEST(TrajectoryFile, RoundTripIsBitwise) {
    Trajectory t;
    std::mt19937 rng(3);
    for (int i = 0; i < 5; ++i) {
        PoseSE3 p(Eigen::Quaterniond(Eigen::AngleAxisd(0.37 * i + 0.1, Vec3(1, 2, 3).normalized())),
                  Vec3(0.1 * i, -1.0 / 3.0, std::sqrt(2.0) * i));
        t.push_back({i, 1305031102.175304 + i / 30.0, p});
    }
    std::stringstream ss;
    io::write_tum_trajectory(t, ss);
    const auto back = io::parse_tum_trajectory(ss);
    ASSERT_EQ(back.size(), t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(back[i].index, static_cast<int>(i));
        EXPECT_EQ(back[i].timestamp, t[i].timestamp);
        EXPECT_EQ(back[i].pose, t[i].pose);
    }
}

TEST(TrajectoryFile, RejectsMalformedLines) {
    std::istringstream in("# header\n1 0 0 0 0 0 0 1\n2 0 0 0 0 0 1\n");
    EXPECT_THROW(
        {
            try {
                io::parse_tum_trajectory(in, "gt");
            } catch (const Error &e) {
                EXPECT_STREQ(e.what(), "gt:3: expected 8 numbers");
                throw;
            }
        },
        Error);
}

// ---- snapshot ------------------------------------------------------------------

TEST(Snapshot, RoundTripIsBitwise) {
    TempDir dir;
    const auto map = random_map(11, 40);
    io::save_snapshot(map, dir.path() / "m.gs4s");
    EXPECT_FALSE(fs::exists(dir.path() / "m.gs4s.tmp"));
    const auto back = io::load_snapshot(dir.path() / "m.gs4s");
    EXPECT_TRUE(back.same_contents(map));

    // Header layout: magic, version 1, N = 20, count = 40.
    const auto bytes = read_bytes(dir.path() / "m.gs4s");
    ASSERT_GE(bytes.size(), 20u);
    EXPECT_EQ(bytes.substr(0, 4), "GS4S");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[8], 20);
    EXPECT_EQ(bytes[12], 40);
    const std::size_t record = 8 * (3 + 3 + 3 + 4 + 1 + 20) + 4 + 8;
    EXPECT_EQ(bytes.size(), 20 + 40 * record);
}

TEST(Snapshot, RejectsForeignData) {
    const auto message = [](const std::string &bytes) {
        std::istringstream in(bytes);
        try {
            io::read_snapshot(in);
        } catch (const Error &e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_EQ(message("PLY\n and more"), "not a snapshot");
    std::ostringstream good;
    io::write_snapshot(random_map(2, 3), good);
    std::string future = good.str();
    future[4] = 2;
    EXPECT_EQ(message(future), "unsupported version");
    EXPECT_EQ(message(good.str().substr(0, good.str().size() - 5)), "snapshot: truncated file");
    EXPECT_EQ(message(good.str() + "x"), "snapshot: trailing bytes");
}

TEST(Snapshot, EmptyMap) {
    std::stringstream ss;
    io::write_snapshot(GaussianMap{}, ss);
    EXPECT_EQ(ss.str().size(), 20u);
    EXPECT_EQ(io::read_snapshot(ss).size(), 0u);
}

// ---- ply -------------------------------------------------------------------------

TEST(Ply, EmptyMapIsValid) {
    std::stringstream ss;
    io::write_ply(GaussianMap{}, ss);
    EXPECT_NE(ss.str().find("element vertex 0\n"), std::string::npos);
    EXPECT_EQ(ss.str().substr(ss.str().size() - 11), "end_header\n");
    EXPECT_EQ(io::read_ply(ss).size(), 0u);
}

TEST(Ply, RoundTripWithinFloatPrecision) {
    const auto map = random_map(12, 25);
    std::stringstream ss;
    io::write_ply(map, ss);
    const std::string bytes = ss.str();
    const auto header_end = bytes.find("end_header\n") + 11;
    EXPECT_EQ(bytes.size() - header_end, 25u * (3 * 4 + 3 + 4 + 3 * 4 + 4 * 4 + 1));
    const auto back = io::read_ply(ss);
    ASSERT_EQ(back.size(), map.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto &a = map[i];
        const auto &b = back[i];
        for (int j = 0; j < 3; ++j) {
            EXPECT_NEAR(b.mean[j], a.mean[j], 1e-6 * (1.0 + std::abs(a.mean[j])));
            EXPECT_NEAR(b.color[j], a.color[j], 0.5 / 255.0 + 1e-12);
            EXPECT_NEAR(std::exp(b.log_scale[j]), std::exp(a.log_scale[j]), 1e-6 * std::exp(a.log_scale[j]));
        }
        EXPECT_NEAR(b.opacity(), a.opacity(), 1e-6);
        EXPECT_LT((b.rotation - a.rotation).norm(), 1e-6);
        EXPECT_EQ(dominant_class(b.class_scores), dominant_class(a.class_scores));
    }
}

TEST(Ply, ClassIsArgmax) {
    GaussianMap map;
    Gaussian g;
    g.class_scores = Eigen::VectorXd::Zero(20);
    g.class_scores[13] = 0.9;
    g.class_scores[4] = 0.8;
    map.append(g);
    std::stringstream ss;
    io::write_ply(map, ss);
    EXPECT_EQ(static_cast<unsigned char>(ss.str().back()), 13u);
}

// ---- images ------------------------------------------------------------------------

TEST(ImageIo, DepthMillimetersAndClamping) {
    TempDir dir;
    ImageD d(3, 2, 1, 0.0);
    d(0, 0) = 1.234;
    d(1, 0) = 70.0;
    d(2, 1) = 65.535;
    EXPECT_EQ(io::write_depth(d, dir.path() / "d.png"), 1u);
    const cv::Mat raw = cv::imread((dir.path() / "d.png").string(), cv::IMREAD_ANYDEPTH);
    EXPECT_EQ(raw.at<std::uint16_t>(0, 0), 1234);
    EXPECT_EQ(raw.at<std::uint16_t>(0, 1), 65535);
    EXPECT_EQ(raw.at<std::uint16_t>(1, 2), 65535);
    EXPECT_EQ(raw.at<std::uint16_t>(1, 0), 0);
    const auto back = io::read_depth(dir.path() / "d.png", 1000.0);
    EXPECT_DOUBLE_EQ(back(0, 0), 1.234);
    EXPECT_EQ(back(0, 1), 0.0);
}

TEST(ImageIo, ColorAndLabelRoundTrip) {
    TempDir dir;
    std::mt19937 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageD c(7, 5, 3);
    for (double &v : c.data()) {
        v = u(rng);
    }
    io::write_color(c, dir.path() / "c.png");
    const auto cb = io::read_color(dir.path() / "c.png");
    for (std::size_t i = 0; i < c.data().size(); ++i) {
        EXPECT_NEAR(cb.data()[i], c.data()[i], 0.5 / 255.0 + 1e-12);
    }
    LabelImage l(7, 5, 1);
    for (std::size_t i = 0; i < l.data().size(); ++i) {
        l.data()[i] = static_cast<std::uint8_t>(i % 3 == 0 ? kUnlabeled : i % 20);
    }
    io::write_labels(l, dir.path() / "l.png");
    EXPECT_EQ(io::read_labels(dir.path() / "l.png").data(), l.data());
    io::write_semantic(l, dir.path() / "s.png");
    const cv::Mat s = cv::imread((dir.path() / "s.png").string());
    EXPECT_EQ(s.at<cv::Vec3b>(0, 0), cv::Vec3b(0, 0, 0));
    const auto &p1 = io::kClassPalette[1];
    EXPECT_EQ(s.at<cv::Vec3b>(0, 1), cv::Vec3b(p1[2], p1[1], p1[0]));
}

// ---- datasets ------------------------------------------------------------------------

namespace {

void make_tum_fixture(const fs::path &root, bool with_gt) {
    write_text(root / "rgb.txt", "# color images\n1.000000 rgb/1.png\n1.100000 rgb/2.png\n1.200000 rgb/3.png\n");
    write_text(root / "depth.txt", "# depth\n1.000000 depth/1.png\n1.100000 depth/2.png\n1.200000 depth/3.png\n");
    for (int i = 1; i <= 3; ++i) {
        write_color_png(root / "rgb" / (std::to_string(i) + ".png"), 8, 6, cv::Vec3b(0, 0, 255));
        write_depth_png(root / "depth" / (std::to_string(i) + ".png"), 8, 6, 5000 * i);
    }
    write_text(root / "groundtruth.txt", with_gt ? "# gt\n1.0 0 0 0 0 0 0 1\n1.1 1 0 0 0 0 0 1\n1.2 2 0 0 0 0 0 1\n" : "");
    write_text(root / "intrinsics.txt", "4 4 3.5 2.5\n");
}

} // namespace

TEST(Tum, ThreeFrameFixture) {
    TempDir dir;
    make_tum_fixture(dir.path(), true);
    const auto src = io::load_tum(dir.path());
    ASSERT_EQ(src.size(), 3u);
    EXPECT_EQ(src.dropped, 0u);
    EXPECT_EQ(src.intrinsics.width, 8);
    EXPECT_EQ(src.intrinsics.fx, 4.0);
    EXPECT_EQ(src.intrinsics.depth_scale, 5000.0);
    for (std::size_t i = 0; i < 3; ++i) {
        ASSERT_TRUE(src.frames[i].pose);
        EXPECT_EQ(src.frames[i].pose->translation.x(), static_cast<double>(i));
    }
    const Frame f = src.load(1);
    EXPECT_EQ(f.depth(3, 3), 2.0);
    EXPECT_EQ(f.rgb(0, 0, 0), 1.0);
    EXPECT_EQ(f.rgb(0, 0, 2), 0.0);
    EXPECT_EQ(f.semantic(0, 0), kUnlabeled);
}

TEST(Tum, EmptyGroundTruthAndDroppedFrames) {
    TempDir dir;
    make_tum_fixture(dir.path(), false);
    write_text(dir.path() / "depth.txt", "1.000000 depth/1.png\n1.130000 depth/2.png\n1.200000 depth/3.png\n");
    const auto src = io::load_tum(dir.path());
    EXPECT_EQ(src.size(), 2u);
    EXPECT_EQ(src.dropped, 1u);
    for (const auto &f : src.frames) {
        EXPECT_FALSE(f.pose);
    }
}

TEST(Tum, Errors) {
    TempDir dir;
    make_tum_fixture(dir.path(), true);
    write_text(dir.path() / "rgb.txt", "1.0 rgb/1.png\nnot-a-time rgb/2.png\n");
    try {
        io::load_tum(dir.path());
        FAIL();
    } catch (const Error &e) {
        EXPECT_NE(std::string(e.what()).find("rgb.txt:2: unparseable line"), std::string::npos) << e.what();
    }
    fs::remove(dir.path() / "depth.txt");
    EXPECT_THROW(io::load_tum(dir.path()), Error);
}

namespace {

void make_scannet_fixture(const fs::path &root, int frames) {
    write_text(root / "intrinsic" / "intrinsic_depth.txt", "5 0 3.5 0\n0 5 2.5 0\n0 0 1 0\n0 0 0 1\n");
    for (int i = 0; i < frames; ++i) {
        const auto n = std::to_string(i);
        write_color_png(root / "color" / (n + ".png"), 16, 12, cv::Vec3b(255, 0, 0));
        write_depth_png(root / "depth" / (n + ".png"), 8, 6, 1500);
        write_text(root / "pose" / (n + ".txt"), "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n");
    }
}

} // namespace

TEST(ScanNet, IdentityPosesAndResizedColor) {
    TempDir dir;
    make_scannet_fixture(dir.path(), 3);
    const auto src = io::load_scannet_dir(dir.path());
    ASSERT_EQ(src.size(), 3u);
    EXPECT_EQ(src.intrinsics.width, 8);
    EXPECT_EQ(src.intrinsics.fx, 5.0);
    for (const auto &e : src.frames) {
        ASSERT_TRUE(e.pose);
        EXPECT_EQ(*e.pose, PoseSE3::identity());
    }
    const Frame f = src.load(2);
    EXPECT_EQ(f.index, 2);
    EXPECT_DOUBLE_EQ(f.timestamp, 2.0 / 30.0);
    EXPECT_EQ(f.rgb.width(), 8);
    EXPECT_EQ(f.rgb(4, 3, 2), 1.0);
    EXPECT_EQ(f.depth(0, 0), 1.5);
    for (auto l : f.semantic.data()) {
        EXPECT_EQ(l, kUnlabeled);
    }
}

TEST(ScanNet, InvalidPosesAndErrors) {
    TempDir dir;
    make_scannet_fixture(dir.path(), 3);
    write_text(dir.path() / "pose" / "1.txt", "-inf -inf -inf -inf\n-inf -inf -inf -inf\n-inf -inf -inf -inf\n0 0 0 1\n");
    const auto src = io::load_scannet_dir(dir.path());
    ASSERT_EQ(src.size(), 2u);
    EXPECT_EQ(src.dropped, 1u);
    EXPECT_EQ(src.frames[1].index, 2);

    write_text(dir.path() / "pose" / "1.txt", "0 0 0 0\n0 0 0 0\n0 0 0 0\n0 0 0 1\n");
    EXPECT_THROW(io::load_scannet_dir(dir.path()), Error);
    write_text(dir.path() / "pose" / "1.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n");
    fs::remove(dir.path() / "color" / "2.png");
    EXPECT_THROW(io::load_scannet_dir(dir.path()), Error);
}

TEST(Synthetic, RootAndConfig) {
    TempDir dir;
    EXPECT_THROW(io::load_synthetic(dir.path() / "missing"), Error);
    write_text(dir.path() / "synthetic.cfg", "width=48\nheight=32\nframes=5\n");
    const auto src = io::load_synthetic(dir.path());
    EXPECT_EQ(src.size(), 5u);
    EXPECT_EQ(src.intrinsics.width, 48);
    const synthetic::Room room(synthetic::RoomConfig{48, 32, 70.0, 5, 1});
    const Frame a = src.load(3), b = room.frame(3);
    EXPECT_EQ(a.rgb.data(), b.rgb.data());
    EXPECT_EQ(a.depth.data(), b.depth.data());
    EXPECT_EQ(*a.pose, *b.pose);
    write_text(dir.path() / "synthetic.cfg", "widht=48\n");
    EXPECT_THROW(io::load_synthetic(dir.path()), Error);
}

TEST(Synthetic, ExportsAsScanNet) {
    TempDir dir;
    const synthetic::Room room(synthetic::RoomConfig{40, 30, 70.0, 4, 2});
    io::export_room_as_scannet(room, dir.path());
    const auto src = io::load_scannet_dir(dir.path());
    ASSERT_EQ(src.size(), 4u);
    const auto k = room.intrinsics();
    EXPECT_NEAR(src.intrinsics.fx, k.fx, 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
        const Frame a = src.load(i), b = room.frame(static_cast<int>(i));
        EXPECT_LT(translation_delta(*a.pose, *b.pose), 1e-12);
        EXPECT_LT(rotation_delta(*a.pose, *b.pose), 1e-7);
        EXPECT_EQ(a.semantic.data(), b.semantic.data());
        for (std::size_t j = 0; j < a.depth.data().size(); ++j) {
            EXPECT_NEAR(a.depth.data()[j], b.depth.data()[j], 0.0005 + 1e-12);
        }
    }
}
