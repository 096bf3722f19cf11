// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/app/run_dir.hpp>
#include <splatmap/io/binary.hpp>
#include <splatmap/io/dataset.hpp>
#include <splatmap/io/snapshot.hpp>
#include <splatmap/io/trajectory.hpp>
#include <splatmap/metrics.hpp>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>

namespace splatmap::app {

/// Metrics of one rendered view against a recorded frame. Depth and mIoU
/// are NaN when the frame has no valid depth or no labels; labeled pixels
/// also go into cm.
inline FrameMetrics evaluate_view(const GaussianMap &map, const CameraIntrinsics &k, const Frame &frame,
                                  const PoseSE3 &pose, ConfusionMatrix &cm) {
    const auto out = render(map, k, pose);
    FrameMetrics m;
    m.index = frame.index;
    m.timestamp = frame.timestamp;
    m.psnr = psnr(out.color, frame.rgb);
    m.ssim = ssim_value(out.color, frame.rgb);
    const bool has_depth = std::any_of(frame.depth.data().begin(), frame.depth.data().end(), [](double d) { return d > 0.0; });
    m.depth_l1_cm = has_depth ? depth_l1_cm(out.depth, frame.depth) : std::numeric_limits<double>::quiet_NaN();
    const auto pred = out.labels();
    ConfusionMatrix own(cm.num_classes());
    own.add(pred, frame.semantic);
    cm.add(pred, frame.semantic);
    m.miou = own.miou();
    return m;
}

enum class EvalSet { keyframes, all_frames, held_out };

struct EvalOptions {
    std::filesystem::path run_dir;
    std::filesystem::path dataset;
    std::optional<io::DatasetFormat> format; // default: the one recorded in the manifest
    EvalSet set = EvalSet::keyframes;
    std::optional<std::filesystem::path> out_dir; // default: run_dir
};

inline nlohmann::ordered_json read_manifest(const std::filesystem::path &run_dir) {
    const auto path = run_dir / kManifestFile;
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw Error(path.string() + ": " + e.what());
    }
}

/// Renders the run's map at the run's estimated poses for the selected
/// dataset frames and scores each against the recorded images. ATE is
/// filled when the dataset carries ground-truth poses.
inline EvalReport evaluate_run(const EvalOptions &opt) {
    const auto manifest = read_manifest(opt.run_dir);
    io::DatasetFormat format = io::DatasetFormat::synthetic;
    if (opt.format) {
        format = *opt.format;
    } else {
        const auto f = io::parse_format(manifest.at("dataset").at("format").get<std::string>());
        if (!f) {
            throw Error("manifest: unknown dataset format");
        }
        format = *f;
    }
    const io::RunConfig cfg = io::load_config(opt.run_dir / kConfigFile);
    const GaussianMap map = io::load_snapshot(opt.run_dir / kSnapshotFile, cfg.mapper);
    const CameraIntrinsics k = read_intrinsics(opt.run_dir / kIntrinsicsFile);
    const Trajectory est = io::read_tum_trajectory(opt.run_dir / kTrajectoryFile);
    std::set<int> keyframes;
    for (const auto &[index, t] : read_keyframe_list(opt.run_dir / kKeyframesFile)) {
        keyframes.insert(index);
    }

    const io::SequenceSource src = io::load_sequence(opt.dataset, format);
    if (src.intrinsics.width != k.width || src.intrinsics.height != k.height) {
        throw Error("dataset image size does not match the run");
    }
    Trajectory entries;
    for (const auto &f : src.frames) {
        entries.push_back({f.index, f.timestamp, PoseSE3::identity()});
    }
    std::map<std::size_t, std::size_t> est_for_frame;
    for (const auto &[i, j] : associate(entries, est)) {
        est_for_frame[i] = j;
    }

    EvalReport report;
    ConfusionMatrix cm(map.config().num_classes);
    for (std::size_t i = 0; i < src.size(); ++i) {
        const bool is_kf = keyframes.count(src.frames[i].index) > 0;
        if ((opt.set == EvalSet::keyframes && !is_kf) || (opt.set == EvalSet::held_out && is_kf)) {
            continue;
        }
        const auto it = est_for_frame.find(i);
        if (it == est_for_frame.end()) {
            continue; // not tracked in this run
        }
        const Frame frame = src.load(i);
        report.frames.push_back(evaluate_view(map, k, frame, est[it->second].pose, cm));
    }
    summarize(report, cm);
    report.gaussian_count = map.size();
    const Trajectory gt = src.ground_truth();
    if (associate(est, gt).size() >= 3) {
        report.ate_rmse_cm = ate_rmse(est, gt);
    }

    const auto out_dir = opt.out_dir.value_or(opt.run_dir);
    std::filesystem::create_directories(out_dir);
    io::detail::write_atomically(out_dir / kEvalFile, [&](std::ostream &os) { write_frame_csv(report, os); });
    io::detail::write_atomically(out_dir / kEvalSummaryFile, [&](std::ostream &os) { write_summary_csv(report, os); });
    return report;
}

} // namespace splatmap::app
