// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/io/config_file.hpp>
#include <splatmap/io/image_io.hpp>
#include <splatmap/io/synthetic.hpp>
#include <splatmap/io/trajectory.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace splatmap::io {

enum class DatasetFormat { tum, scannet_dir, synthetic };

inline const char *to_string(DatasetFormat f) {
    switch (f) {
    case DatasetFormat::tum:
        return "tum";
    case DatasetFormat::scannet_dir:
        return "scannet_dir";
    case DatasetFormat::synthetic:
        return "synthetic";
    }
    return "?";
}

inline std::optional<DatasetFormat> parse_format(std::string_view s) {
    if (s == "tum") {
        return DatasetFormat::tum;
    }
    if (s == "scannet_dir" || s == "scannet") {
        return DatasetFormat::scannet_dir;
    }
    if (s == "synthetic") {
        return DatasetFormat::synthetic;
    }
    return std::nullopt;
}

struct FrameEntry {
    int index = 0;
    double timestamp = 0.0;
    std::filesystem::path rgb;
    std::filesystem::path depth;
    std::filesystem::path labels; // empty: unlabeled
    std::optional<PoseSE3> pose;
};

/// An ordered, lazily decoded RGB-D sequence.
struct SequenceSource {
    std::filesystem::path root;
    DatasetFormat format = DatasetFormat::synthetic;
    CameraIntrinsics intrinsics;
    std::vector<FrameEntry> frames;
    std::size_t dropped = 0; // frames skipped at load (no association, invalid pose)
    std::shared_ptr<const synthetic::Room> room;

    std::size_t size() const noexcept { return frames.size(); }

    Trajectory ground_truth() const {
        Trajectory t;
        for (const auto &f : frames) {
            if (f.pose) {
                t.push_back({f.index, f.timestamp, *f.pose});
            }
        }
        return t;
    }

    /// Decodes frame i (position in `frames`, not the frame index).
    Frame load(std::size_t i) const {
        const FrameEntry &e = frames.at(i);
        if (room) {
            return room->frame(e.index);
        }
        Frame f;
        f.index = e.index;
        f.timestamp = e.timestamp;
        f.pose = e.pose;
        f.depth = read_depth(e.depth, intrinsics.depth_scale);
        if (f.depth.width() != intrinsics.width || f.depth.height() != intrinsics.height) {
            throw Error("depth image size does not match intrinsics: " + e.depth.string());
        }
        f.rgb = read_color(e.rgb, intrinsics.width, intrinsics.height);
        f.semantic = e.labels.empty() ? LabelImage(intrinsics.width, intrinsics.height, 1, kUnlabeled)
                                      : read_labels(e.labels, intrinsics.width, intrinsics.height);
        return f;
    }
};

namespace detail {

struct StampedPath {
    double timestamp;
    std::string path;
};

inline std::vector<StampedPath> read_tum_list(const std::filesystem::path &file) {
    std::ifstream in(file);
    if (!in) {
        throw Error("missing association file: " + file.string());
    }
    std::vector<StampedPath> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        std::istringstream ls(line);
        StampedPath sp;
        if (!(ls >> sp.timestamp)) {
            if (ls.eof() && line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            throw Error(file.string() + ":" + std::to_string(lineno) + ": unparseable line");
        }
        if (!(ls >> sp.path)) {
            throw Error(file.string() + ":" + std::to_string(lineno) + ": unparseable line");
        }
        out.push_back(std::move(sp));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.timestamp < b.timestamp; });
    return out;
}

inline std::pair<int, int> image_size(const std::filesystem::path &path) {
    const cv::Mat m = cv::imread(path.string(), cv::IMREAD_ANYDEPTH);
    if (m.empty()) {
        throw Error("failed to read image: " + path.string());
    }
    return {m.cols, m.rows};
}

/// "fx fy cx cy" on one line (other whitespace-separated numbers ignored).
inline std::optional<std::array<double, 4>> read_pinhole(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        return std::nullopt;
    }
    std::array<double, 4> v{};
    for (double &x : v) {
        if (!(in >> x)) {
            throw Error("unparseable intrinsics file: " + path.string());
        }
    }
    return v;
}

inline std::optional<PoseSE3> read_pose_matrix(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open pose file: " + path.string());
    }
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            std::string tok;
            if (!(in >> tok)) {
                throw Error("pose file needs 16 numbers: " + path.string());
            }
            try {
                m(r, c) = std::stod(tok);
            } catch (const std::exception &) {
                throw Error("unparseable pose file: " + path.string());
            }
        }
    }
    if (!m.allFinite()) {
        return std::nullopt; // marked invalid by the capture pipeline
    }
    const Mat3 r = m.topLeftCorner<3, 3>();
    if (!(std::abs(r.determinant()) > 1e-6)) {
        throw Error("non-invertible pose matrix: " + path.string());
    }
    return PoseSE3::from_matrix(m);
}

// Numeric stem files in dir with one of the extensions, sorted by number.
inline std::vector<std::pair<int, std::filesystem::path>> numbered_files(const std::filesystem::path &dir,
                                                                        std::initializer_list<const char *> exts) {
    std::vector<std::pair<int, std::filesystem::path>> out;
    if (!std::filesystem::is_directory(dir)) {
        return out;
    }
    for (const auto &e : std::filesystem::directory_iterator(dir)) {
        const auto stem = e.path().stem().string();
        const auto ext = e.path().extension().string();
        if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            continue;
        }
        if (std::find_if(exts.begin(), exts.end(), [&](const char *x) { return ext == x; }) == exts.end()) {
            continue;
        }
        out.emplace_back(std::stoi(stem), e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace detail

inline constexpr double kTumDepthScale = 5000.0;

/// TUM RGB-D layout: rgb.txt, depth.txt and optionally groundtruth.txt.
/// Pinhole parameters come from intrinsics.txt when present.
inline SequenceSource load_tum(const std::filesystem::path &root) {
    SequenceSource src;
    src.root = root;
    src.format = DatasetFormat::tum;
    const auto rgb = detail::read_tum_list(root / "rgb.txt");
    const auto depth = detail::read_tum_list(root / "depth.txt");
    Trajectory gt;
    if (std::filesystem::exists(root / "groundtruth.txt")) {
        gt = read_tum_trajectory(root / "groundtruth.txt");
    }
    Trajectory rgb_t, depth_t;
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        rgb_t.push_back({static_cast<int>(i), rgb[i].timestamp, {}});
    }
    for (std::size_t i = 0; i < depth.size(); ++i) {
        depth_t.push_back({static_cast<int>(i), depth[i].timestamp, {}});
    }
    const auto pairs = associate(rgb_t, depth_t);
    src.dropped = rgb.size() - pairs.size();
    for (const auto &[i, j] : pairs) {
        FrameEntry e;
        e.index = static_cast<int>(src.frames.size());
        e.timestamp = rgb[i].timestamp;
        e.rgb = root / rgb[i].path;
        e.depth = root / depth[j].path;
        src.frames.push_back(std::move(e));
    }
    if (!gt.empty()) {
        Trajectory frame_t;
        for (const auto &f : src.frames) {
            frame_t.push_back({f.index, f.timestamp, {}});
        }
        for (const auto &[i, j] : associate(frame_t, gt)) {
            src.frames[i].pose = gt[j].pose;
        }
    }
    auto &k = src.intrinsics;
    k.fx = 525.0;
    k.fy = 525.0;
    k.cx = 319.5;
    k.cy = 239.5;
    if (const auto p = detail::read_pinhole(root / "intrinsics.txt")) {
        k.fx = (*p)[0];
        k.fy = (*p)[1];
        k.cx = (*p)[2];
        k.cy = (*p)[3];
    }
    k.depth_scale = kTumDepthScale;
    if (src.frames.empty()) {
        k.width = 640;
        k.height = 480;
    } else {
        std::tie(k.width, k.height) = detail::image_size(src.frames.front().depth);
    }
    k.validate();
    return src;
}

/// ScanNet export layout: color/, depth/ (mm), pose/ (4x4 camera-to-world),
/// intrinsic/intrinsic_depth.txt and optional label/.
inline SequenceSource load_scannet_dir(const std::filesystem::path &root) {
    SequenceSource src;
    src.root = root;
    src.format = DatasetFormat::scannet_dir;
    const auto depth = detail::numbered_files(root / "depth", {".png"});
    const auto color = detail::numbered_files(root / "color", {".jpg", ".png"});
    if (!std::filesystem::is_directory(root / "depth")) {
        throw Error("missing depth directory: " + (root / "depth").string());
    }
    if (depth.size() != color.size()) {
        throw Error("mismatched frame counts: " + std::to_string(color.size()) + " color vs " +
                    std::to_string(depth.size()) + " depth");
    }
    const bool has_labels = std::filesystem::is_directory(root / "label");
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (depth[i].first != color[i].first) {
            throw Error("mismatched frame numbering at " + depth[i].second.string());
        }
        const int idx = depth[i].first;
        FrameEntry e;
        e.index = idx;
        e.timestamp = idx / 30.0;
        e.depth = depth[i].second;
        e.rgb = color[i].second;
        const auto pose_file = root / "pose" / (std::to_string(idx) + ".txt");
        if (std::filesystem::exists(pose_file)) {
            e.pose = detail::read_pose_matrix(pose_file);
            if (!e.pose) {
                ++src.dropped;
                continue;
            }
        }
        if (has_labels) {
            const auto label = root / "label" / (std::to_string(idx) + ".png");
            if (std::filesystem::exists(label)) {
                e.labels = label;
            }
        }
        src.frames.push_back(std::move(e));
    }

    const auto kfile = root / "intrinsic" / "intrinsic_depth.txt";
    std::ifstream in(kfile);
    if (!in) {
        throw Error("missing intrinsics: " + kfile.string());
    }
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            if (!(in >> m(r, c))) {
                throw Error("unparseable intrinsics: " + kfile.string());
            }
        }
    }
    auto &k = src.intrinsics;
    k.fx = m(0, 0);
    k.fy = m(1, 1);
    k.cx = m(0, 2);
    k.cy = m(1, 2);
    k.depth_scale = 1000.0;
    if (depth.empty()) {
        k.width = 640;
        k.height = 480;
    } else {
        std::tie(k.width, k.height) = detail::image_size(depth.front().second);
    }
    k.validate();
    return src;
}

/// Room generator settings read from an optional synthetic.cfg
/// (width, height, hfov_deg, frames, seed as key=value).
inline synthetic::RoomConfig read_room_config(const std::filesystem::path &file) {
    synthetic::RoomConfig cfg;
    std::ifstream in(file);
    if (!in) {
        return cfg;
    }
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = line;
        if (const auto hash = s.find('#'); hash != std::string_view::npos) {
            s = s.substr(0, hash);
        }
        s = detail::trim(s);
        if (s.empty()) {
            continue;
        }
        const std::string where = file.string() + ":" + std::to_string(lineno);
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) {
            throw Error(where + ": expected key=value");
        }
        const auto key = detail::trim(s.substr(0, eq));
        const auto value = detail::trim(s.substr(eq + 1));
        if (key == "width") {
            cfg.width = detail::parse_number<int>(value, where);
        } else if (key == "height") {
            cfg.height = detail::parse_number<int>(value, where);
        } else if (key == "hfov_deg") {
            cfg.hfov_deg = detail::parse_number<double>(value, where);
        } else if (key == "frames") {
            cfg.frames = detail::parse_number<int>(value, where);
        } else if (key == "seed") {
            cfg.seed = detail::parse_number<std::uint32_t>(value, where);
        } else {
            throw Error(where + ": unknown key '" + std::string(key) + "'");
        }
    }
    cfg.validate();
    return cfg;
}

inline void write_room_config(const synthetic::RoomConfig &cfg, const std::filesystem::path &file) {
    std::ofstream out(file);
    if (!out) {
        throw Error("cannot write " + file.string());
    }
    out << "width=" << cfg.width << "\nheight=" << cfg.height << "\nhfov_deg=" << detail::format_double(cfg.hfov_deg)
        << "\nframes=" << cfg.frames << "\nseed=" << cfg.seed << '\n';
}

/// The procedural room; root must be an existing directory and may hold a
/// synthetic.cfg.
inline SequenceSource load_synthetic(const std::filesystem::path &root) {
    if (!std::filesystem::is_directory(root)) {
        throw Error("synthetic dataset root is not a directory: " + root.string());
    }
    SequenceSource src;
    src.root = root;
    src.format = DatasetFormat::synthetic;
    src.room = std::make_shared<synthetic::Room>(read_room_config(root / "synthetic.cfg"));
    src.intrinsics = src.room->intrinsics();
    for (int i = 0; i < src.room->config().frames; ++i) {
        src.frames.push_back({i, src.room->timestamp(i), {}, {}, {}, src.room->pose(i)});
    }
    return src;
}

inline SequenceSource load_sequence(const std::filesystem::path &root, DatasetFormat format) {
    switch (format) {
    case DatasetFormat::tum:
        return load_tum(root);
    case DatasetFormat::scannet_dir:
        return load_scannet_dir(root);
    case DatasetFormat::synthetic:
        return load_synthetic(root);
    }
    throw Error("unknown dataset format");
}

/// Writes a room sequence in the scannet_dir layout (labels included).
inline void export_room_as_scannet(const synthetic::Room &room, const std::filesystem::path &root) {
    const auto k = room.intrinsics();
    for (const char *d : {"color", "depth", "pose", "label", "intrinsic"}) {
        std::filesystem::create_directories(root / d);
    }
    {
        std::ofstream kf(root / "intrinsic" / "intrinsic_depth.txt");
        kf << detail::format_double(k.fx) << " 0 " << detail::format_double(k.cx) << " 0\n0 "
           << detail::format_double(k.fy) << ' ' << detail::format_double(k.cy) << " 0\n0 0 1 0\n0 0 0 1\n";
    }
    for (int i = 0; i < room.config().frames; ++i) {
        const Frame f = room.frame(i);
        const std::string n = std::to_string(i);
        write_color(f.rgb, root / "color" / (n + ".png"));
        write_depth(f.depth, root / "depth" / (n + ".png"), 1000.0);
        write_labels(f.semantic, root / "label" / (n + ".png"));
        std::ofstream pf(root / "pose" / (n + ".txt"));
        const Eigen::Matrix4d m = f.pose->matrix();
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) {
                pf << detail::format_double(m(r, c)) << (c == 3 ? '\n' : ' ');
            }
        }
    }
}

} // namespace splatmap::io
