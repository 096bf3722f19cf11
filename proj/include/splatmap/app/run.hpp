// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/app/evaluate.hpp>
#include <splatmap/app/run_dir.hpp>
#include <splatmap/detail/bounded_queue.hpp>
#include <splatmap/io/binary.hpp>
#include <splatmap/io/config_file.hpp>
#include <splatmap/io/dataset.hpp>
#include <splatmap/io/ply.hpp>
#include <splatmap/io/snapshot.hpp>
#include <splatmap/io/trajectory.hpp>
#include <splatmap/mapper.hpp>
#include <splatmap/metrics.hpp>
#include <splatmap/tracker.hpp>

#include <json.hpp>

#include <chrono>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

namespace splatmap::app {

struct RunOptions {
    std::filesystem::path dataset;
    io::DatasetFormat format = io::DatasetFormat::synthetic;
    std::optional<std::filesystem::path> config;
    std::optional<TrackerMode> pose_mode; // overrides the config file
    std::filesystem::path out;
    /// TUM trajectory of revised poses, applied to the keyframes after
    /// mapping as pose-correction events.
    std::optional<std::filesystem::path> corrections;
    std::size_t queue_capacity = 4;
    std::ostream *log = nullptr;
};

struct FrameTiming {
    int index = 0;
    double track_ms = 0.0;
    double map_ms = 0.0;
    bool keyframe = false;
};

struct RunResult {
    std::size_t frames = 0;
    std::vector<FrameReport> keyframes;
    std::vector<std::pair<int, int>> loop_candidates; // (earlier keyframe, new keyframe)
    std::size_t icp_flagged = 0;
    std::vector<PoseCorrection> corrections;
    std::optional<OptimizeReport> optimize;
    Trajectory trajectory;
    EvalReport keyframe_metrics;
    std::vector<FrameTiming> timing;
    double wall_seconds = 0.0;
};

namespace detail {

struct Tracked {
    Frame frame;
    TrackResult result;
    double track_ms = 0.0;
};

// First exception from any stage; later ones are dropped.
class ErrorSlot {
  public:
    void capture() {
        std::lock_guard lock(mu_);
        if (!error_) {
            error_ = std::current_exception();
        }
    }
    void rethrow() {
        if (error_) {
            std::rethrow_exception(error_);
        }
    }

  private:
    std::mutex mu_;
    std::exception_ptr error_;
};

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline nlohmann::ordered_json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json config_json(const io::RunConfig &cfg) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    std::istringstream in(io::to_text(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        const auto parsed = nlohmann::ordered_json::parse(value, nullptr, false);
        j[key] = parsed.is_discarded() ? nlohmann::ordered_json(value) : parsed;
    }
    return j;
}

inline nlohmann::ordered_json manifest_json(const RunOptions &opt, const io::RunConfig &cfg,
                                            const io::SequenceSource &src, const RunResult &r,
                                            const GaussianMap &map) {
    using json = nlohmann::ordered_json;
    json j;
    j["tool"] = "gs4slam";
    j["dataset"] = {{"root", opt.dataset.generic_string()},
                    {"format", io::to_string(src.format)},
                    {"frames", src.size()},
                    {"dropped", src.dropped}};
    const auto &k = src.intrinsics;
    j["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
    j["mode"] = cfg.tracker.mode == TrackerMode::icp ? "icp" : "gt";
    j["config"] = config_json(cfg);

    json kfs = json::array();
    for (const auto &rep : r.keyframes) {
        kfs.push_back({{"index", rep.index},
                       {"predicted", rep.predicted},
                       {"inserted", rep.inserted},
                       {"pruned", rep.pruned},
                       {"map_size", rep.map_size},
                       {"supervision", rep.supervision},
                       {"refine",
                        {{"updated", rep.refine.updated},
                         {"loss_before", number_or_null(rep.refine.loss_before)},
                         {"loss_after", number_or_null(rep.refine.loss_after)},
                         {"halvings", rep.refine.halvings},
                         {"accepted", rep.refine.step_accepted}}}});
    }
    j["keyframes"] = kfs;

    json loops = json::array();
    for (const auto &[a, b] : r.loop_candidates) {
        loops.push_back({a, b});
    }
    j["tracking"] = {{"frames", r.frames}, {"icp_flagged", r.icp_flagged}, {"loop_candidates", loops}};

    json corr = json::array();
    for (const auto &c : r.corrections) {
        corr.push_back({{"index", c.frame_index}, {"magnitude", c.magnitude}});
    }
    json opt_json = nullptr;
    if (r.optimize) {
        opt_json = {{"frames", r.optimize->frames},
                    {"loss_before", number_or_null(r.optimize->loss_before)},
                    {"loss_after", number_or_null(r.optimize->loss_after)},
                    {"halvings", r.optimize->halvings},
                    {"applied", r.optimize->applied},
                    {"moved", r.optimize->moved}};
    }
    j["corrections"] = {{"events", corr}, {"optimize", opt_json}};

    j["map"] = {{"gaussians", map.size()},
                {"num_classes", map.config().num_classes},
                {"snapshot", kSnapshotFile},
                {"ply", kPlyFile}};
    const auto &m = r.keyframe_metrics;
    j["metrics"] = {{"views", m.frames.size()},
                    {"psnr_db", m.frames.empty() ? json(nullptr) : number_or_null(m.psnr)},
                    {"psnr_infinite", std::isinf(m.psnr) && !m.frames.empty()},
                    {"ssim", number_or_null(m.ssim)},
                    {"depth_l1_cm", number_or_null(m.depth_l1_cm)},
                    {"miou_pct", number_or_null(m.miou)}};
    return j;
}

inline nlohmann::ordered_json timing_json(const RunResult &r) {
    using json = nlohmann::ordered_json;
    json frames = json::array();
    for (const auto &t : r.timing) {
        frames.push_back({{"index", t.index}, {"track_ms", t.track_ms}, {"map_ms", t.map_ms}, {"keyframe", t.keyframe}});
    }
    const double fps = r.wall_seconds > 0.0 ? static_cast<double>(r.frames) / r.wall_seconds : 0.0;
    return {{"frames", r.frames}, {"wall_seconds", r.wall_seconds}, {"fps", fps}, {"per_frame", frames}};
}

inline void write_json(const nlohmann::ordered_json &j, const std::filesystem::path &path) {
    io::detail::write_atomically(path, [&](std::ostream &os) { os << j.dump(2) << '\n'; }, false);
}

} // namespace detail

/// Maps a whole sequence: a loader thread decodes frames, a tracker thread
/// estimates poses and picks keyframes, and the calling thread runs the
/// mapper on keyframes. Every stage is a single FIFO worker, so results do
/// not depend on scheduling. Writes the map, trajectory, per-keyframe
/// renders and the manifest into opt.out.
inline RunResult run_sequence(const RunOptions &opt) {
    const auto t_start = std::chrono::steady_clock::now();
    io::RunConfig cfg = opt.config ? io::load_config(*opt.config) : io::RunConfig{};
    if (opt.pose_mode) {
        cfg.tracker.mode = *opt.pose_mode;
    }
    cfg.validate();
    const io::SequenceSource src = io::load_sequence(opt.dataset, opt.format);
    const CameraIntrinsics k = src.intrinsics;
    std::optional<Trajectory> revised;
    if (opt.corrections) {
        revised = io::read_tum_trajectory(*opt.corrections);
    }
    std::filesystem::create_directories(opt.out);

    RunResult result;
    Mapper mapper(k, cfg.mapper);
    Tracker tracker(k, cfg.tracker);
    ::splatmap::detail::BoundedQueue<Frame> loaded(opt.queue_capacity);
    ::splatmap::detail::BoundedQueue<detail::Tracked> tracked(opt.queue_capacity);
    detail::ErrorSlot error;
    const auto abort_all = [&] {
        error.capture();
        loaded.close();
        tracked.close();
    };

    std::jthread loader([&] {
        try {
            for (std::size_t i = 0; i < src.size(); ++i) {
                if (!loaded.push(src.load(i))) {
                    return;
                }
            }
            loaded.close();
        } catch (...) {
            abort_all();
        }
    });
    std::jthread tracking([&] {
        try {
            while (auto f = loaded.pop()) {
                const auto t0 = std::chrono::steady_clock::now();
                detail::Tracked t{std::move(*f), {}, 0.0};
                t.result = tracker.track(t.frame);
                t.track_ms = detail::ms_since(t0);
                if (!tracked.push(std::move(t))) {
                    return;
                }
            }
            tracked.close();
        } catch (...) {
            abort_all();
        }
    });

    try {
        while (auto t = tracked.pop()) {
            const auto t0 = std::chrono::steady_clock::now();
            Frame &f = t->frame;
            f.pose = t->result.pose;
            result.trajectory.push_back({f.index, f.timestamp, t->result.pose});
            if (t->result.icp && t->result.icp->flagged) {
                ++result.icp_flagged;
            }
            if (t->result.is_keyframe) {
                for (const auto &kf : mapper.keyframes()) {
                    const int gap = f.index - kf.index;
                    if (gap >= cfg.tracker.loop_min_separation &&
                        is_loop_candidate(mean_reprojection_flow(kf, *f.pose, k), gap, cfg.tracker)) {
                        result.loop_candidates.emplace_back(kf.index, f.index);
                    }
                }
                result.keyframes.push_back(mapper.process_keyframe(f));
                if (opt.log) {
                    const auto &rep = result.keyframes.back();
                    *opt.log << "keyframe " << rep.index << ": +" << rep.inserted << " -" << rep.pruned << " -> "
                             << rep.map_size << " gaussians\n";
                }
            }
            result.timing.push_back({f.index, t->track_ms, detail::ms_since(t0), t->result.is_keyframe});
            ++result.frames;
        }
    } catch (...) {
        abort_all();
    }
    loader.join();
    tracking.join();
    error.rethrow();

    if (revised) {
        Trajectory kf_traj;
        for (const auto &kf : mapper.keyframes()) {
            kf_traj.push_back({kf.index, kf.timestamp, *kf.pose});
        }
        result.corrections = detect_pose_corrections(kf_traj, *revised, cfg.mapper);
        std::vector<std::pair<int, PoseSE3>> updates;
        for (const auto &c : result.corrections) {
            updates.emplace_back(c.frame_index, c.new_pose);
        }
        if (!updates.empty()) {
            result.optimize = mapper.apply_corrections(updates);
            for (auto &p : result.trajectory) {
                for (const auto &[index, pose] : updates) {
                    if (p.index == index) {
                        p.pose = pose;
                    }
                }
            }
        }
    }

    // Final map rendered at every keyframe: images plus the metric summary.
    ConfusionMatrix cm(cfg.mapper.num_classes);
    std::vector<std::pair<int, double>> kf_list;
    for (const auto &kf : mapper.keyframes()) {
        kf_list.emplace_back(kf.index, kf.timestamp);
        const auto out = render(mapper.map(), k, *kf.pose);
        write_render_set(out, opt.out / kRendersDir, render_stem(kf.index));
        result.keyframe_metrics.frames.push_back(evaluate_view(mapper.map(), k, kf, *kf.pose, cm));
    }
    summarize(result.keyframe_metrics, cm);
    result.keyframe_metrics.gaussian_count = mapper.map().size();

    io::save_snapshot(mapper.map(), opt.out / kSnapshotFile);
    io::export_ply(mapper.map(), opt.out / kPlyFile);
    io::write_tum_trajectory(result.trajectory, opt.out / kTrajectoryFile);
    write_keyframe_list(kf_list, opt.out / kKeyframesFile);
    write_intrinsics(k, opt.out / kIntrinsicsFile);
    io::detail::write_atomically(opt.out / kConfigFile, [&](std::ostream &os) { os << io::to_text(cfg); }, false);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    detail::write_json(detail::timing_json(result), opt.out / kTimingFile);
    detail::write_json(detail::manifest_json(opt, cfg, src, result, mapper.map()), opt.out / kManifestFile);
    return result;
}

/// Renders all four channels at every pose of a TUM trajectory file.
/// Intrinsics default to the intrinsics.txt next to the snapshot.
inline std::size_t render_poses(const std::filesystem::path &snapshot, const std::filesystem::path &poses,
                                const std::filesystem::path &out,
                                const std::optional<std::filesystem::path> &intrinsics = std::nullopt) {
    const GaussianMap map = io::load_snapshot(snapshot);
    const CameraIntrinsics k = read_intrinsics(intrinsics.value_or(snapshot.parent_path() / kIntrinsicsFile));
    const Trajectory traj = io::read_tum_trajectory(poses);
    std::filesystem::create_directories(out);
    for (std::size_t i = 0; i < traj.size(); ++i) {
        write_render_set(render(map, k, traj[i].pose), out, render_stem(static_cast<int>(i)));
    }
    return traj.size();
}

} // namespace splatmap::app
