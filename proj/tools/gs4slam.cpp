// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

// gs4slam: run / render / eval / synth front end.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <splatmap/app/evaluate.hpp>
#include <splatmap/app/run.hpp>
#include <splatmap/io/dataset.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

namespace {

using namespace splatmap;

const std::map<std::string, io::DatasetFormat> kFormats{
    {"tum", io::DatasetFormat::tum},
    {"scannet_dir", io::DatasetFormat::scannet_dir},
    {"synthetic", io::DatasetFormat::synthetic},
};

const std::map<std::string, TrackerMode> kPoseModes{{"gt", TrackerMode::ground_truth}, {"icp", TrackerMode::icp}};

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Incremental RGB-D semantic Gaussian-splatting mapper"};
    app.require_subcommand(1);

    app::RunOptions run;
    std::string run_dataset, run_out, run_config, run_corrections;
    io::DatasetFormat run_format = io::DatasetFormat::synthetic;
    TrackerMode pose_mode = TrackerMode::ground_truth;
    bool quiet = false;
    auto *run_cmd = app.add_subcommand("run", "Map a sequence and write the run directory");
    run_cmd->add_option("dataset", run_dataset, "Dataset root")->required();
    run_cmd->add_option("--format", run_format, "tum, scannet_dir or synthetic")
        ->required()
        ->transform(CLI::CheckedTransformer(kFormats, CLI::ignore_case));
    run_cmd->add_option("--config", run_config, "key=value config file")->check(CLI::ExistingFile);
    auto *mode_opt = run_cmd->add_option("--pose-mode", pose_mode, "gt or icp (overrides the config)")
                         ->transform(CLI::CheckedTransformer(kPoseModes, CLI::ignore_case));
    run_cmd->add_option("--out", run_out, "Output run directory")->required();
    run_cmd->add_option("--corrections", run_corrections, "TUM trajectory of revised keyframe poses")
        ->check(CLI::ExistingFile);
    run_cmd->add_flag("-q,--quiet", quiet, "No per-keyframe log");

    std::string snapshot, poses, render_out, intrinsics;
    auto *render_cmd = app.add_subcommand("render", "Render a snapshot at the poses of a TUM trajectory");
    render_cmd->add_option("snapshot", snapshot, "map.gs4s file")->required();
    render_cmd->add_option("poses", poses, "TUM trajectory file")->required();
    render_cmd->add_option("--out", render_out, "Output directory")->required();
    render_cmd->add_option("--intrinsics", intrinsics, "intrinsics.txt (default: next to the snapshot)");

    app::EvalOptions eval;
    std::string eval_run, eval_dataset, eval_out;
    io::DatasetFormat eval_format = io::DatasetFormat::synthetic;
    bool all_frames = false, held_out = false;
    auto *eval_cmd = app.add_subcommand("eval", "Score a run against its dataset");
    eval_cmd->add_option("run_dir", eval_run, "Run directory")->required();
    eval_cmd->add_option("dataset", eval_dataset, "Dataset root")->required();
    auto *eval_format_opt = eval_cmd->add_option("--format", eval_format, "Dataset format (default: from the manifest)")
                                ->transform(CLI::CheckedTransformer(kFormats, CLI::ignore_case));
    auto *all_opt = eval_cmd->add_flag("--all-frames", all_frames, "Evaluate every tracked frame");
    eval_cmd->add_flag("--held-out", held_out, "Evaluate only frames that are not keyframes")->excludes(all_opt);
    eval_cmd->add_option("--out", eval_out, "Where eval.csv goes (default: the run directory)");

    synthetic::RoomConfig room;
    std::string synth_out;
    bool as_scannet = false;
    auto *synth_cmd = app.add_subcommand("synth", "Create a synthetic room dataset");
    synth_cmd->add_option("dir", synth_out, "Output directory")->required();
    synth_cmd->add_option("--width", room.width)->capture_default_str();
    synth_cmd->add_option("--height", room.height)->capture_default_str();
    synth_cmd->add_option("--hfov", room.hfov_deg, "Horizontal field of view, degrees")->capture_default_str();
    synth_cmd->add_option("--frames", room.frames)->capture_default_str();
    synth_cmd->add_option("--seed", room.seed)->capture_default_str();
    synth_cmd->add_flag("--scannet", as_scannet, "Write images in the scannet_dir layout instead of a synthetic.cfg");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (*run_cmd) {
            run.dataset = run_dataset;
            run.format = run_format;
            run.out = run_out;
            if (!run_config.empty()) {
                run.config = run_config;
            }
            if (*mode_opt) {
                run.pose_mode = pose_mode;
            }
            if (!run_corrections.empty()) {
                run.corrections = run_corrections;
            }
            if (!quiet) {
                run.log = &std::cerr;
            }
            const auto r = app::run_sequence(run);
            std::printf("frames %zu  keyframes %zu  gaussians %zu  wall %.2fs  fps %.3f\n", r.frames,
                        r.keyframes.size(), r.keyframe_metrics.gaussian_count, r.wall_seconds,
                        r.wall_seconds > 0.0 ? static_cast<double>(r.frames) / r.wall_seconds : 0.0);
        } else if (*render_cmd) {
            std::optional<std::filesystem::path> k;
            if (!intrinsics.empty()) {
                k = intrinsics;
            }
            const auto n = app::render_poses(snapshot, poses, render_out, k);
            std::printf("rendered %zu views\n", n);
        } else if (*eval_cmd) {
            eval.run_dir = eval_run;
            eval.dataset = eval_dataset;
            if (*eval_format_opt) {
                eval.format = eval_format;
            }
            eval.set = all_frames ? app::EvalSet::all_frames : held_out ? app::EvalSet::held_out : app::EvalSet::keyframes;
            if (!eval_out.empty()) {
                eval.out_dir = eval_out;
            }
            const auto r = app::evaluate_run(eval);
            write_summary_csv(r, std::cout);
        } else if (*synth_cmd) {
            room.validate();
            std::filesystem::create_directories(synth_out);
            if (as_scannet) {
                io::export_room_as_scannet(synthetic::Room(room), synth_out);
            } else {
                io::write_room_config(room, std::filesystem::path(synth_out) / "synthetic.cfg");
            }
        }
    } catch (const std::exception &e) {
        std::cerr << "gs4slam: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
