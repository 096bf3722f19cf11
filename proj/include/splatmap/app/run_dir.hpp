// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// File names inside a run directory and the small text formats that only
// the run/render/eval commands share.

#include <splatmap/geometry.hpp>
#include <splatmap/io/config_file.hpp>
#include <splatmap/io/image_io.hpp>
#include <splatmap/renderer.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace splatmap::app {

inline constexpr const char *kSnapshotFile = "map.gs4s";
inline constexpr const char *kPlyFile = "map.ply";
inline constexpr const char *kManifestFile = "manifest.json";
inline constexpr const char *kTimingFile = "timing.json";
inline constexpr const char *kTrajectoryFile = "trajectory.txt";
inline constexpr const char *kKeyframesFile = "keyframes.txt";
inline constexpr const char *kIntrinsicsFile = "intrinsics.txt";
inline constexpr const char *kConfigFile = "config.txt";
inline constexpr const char *kRendersDir = "renders";
inline constexpr const char *kEvalFile = "eval.csv";
inline constexpr const char *kEvalSummaryFile = "eval_summary.csv";

/// "fx fy cx cy width height depth_scale" on one line.
inline void write_intrinsics(const CameraIntrinsics &k, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    using io::detail::format_double;
    out << format_double(k.fx) << ' ' << format_double(k.fy) << ' ' << format_double(k.cx) << ' '
        << format_double(k.cy) << ' ' << k.width << ' ' << k.height << ' ' << format_double(k.depth_scale) << '\n';
}

inline CameraIntrinsics read_intrinsics(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    CameraIntrinsics k;
    if (!(in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
        throw Error(path.string() + ": expected fx fy cx cy width height");
    }
    if (!(in >> k.depth_scale)) {
        k.depth_scale = 1000.0;
    }
    k.validate();
    return k;
}

/// One "index timestamp" line per keyframe.
inline void write_keyframe_list(const std::vector<std::pair<int, double>> &kfs, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    for (const auto &[index, t] : kfs) {
        out << index << ' ' << io::detail::format_double(t) << '\n';
    }
}

inline std::vector<std::pair<int, double>> read_keyframe_list(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::vector<std::pair<int, double>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (io::detail::trim(line).empty()) {
            continue;
        }
        std::istringstream ls(line);
        int index = 0;
        double t = 0.0;
        if (!(ls >> index >> t)) {
            throw Error(path.string() + ":" + std::to_string(lineno) + ": expected index and timestamp");
        }
        out.emplace_back(index, t);
    }
    return out;
}

inline std::string render_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d", index);
    return buf;
}

/// Writes <stem>_color.png, _depth.png (16-bit mm), _semantic.png (palette)
/// and _silhouette.png into dir.
inline void write_render_set(const RenderOutput &out, const std::filesystem::path &dir, const std::string &stem) {
    std::filesystem::create_directories(dir);
    io::write_color(out.color, dir / (stem + "_color.png"));
    io::write_depth(out.depth, dir / (stem + "_depth.png"));
    io::write_semantic(out.labels(), dir / (stem + "_semantic.png"));
    io::write_gray(out.silhouette, dir / (stem + "_silhouette.png"));
}

} // namespace splatmap::app
