// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/image.hpp>

#include <string>

namespace splatmap {

inline constexpr int kDefaultNumClasses = 20;

/// Map lifecycle parameters.
struct MapperConfig {
    int num_classes = kDefaultNumClasses;
    /// One Gaussian per stride x stride pixel block.
    int stride = 4;
    /// Pixels whose rendered silhouette is below this are "uncovered".
    double silhouette_threshold = 0.5;
    /// Gaussians with opacity strictly below this are pruned.
    double prune_opacity = 0.005;
    /// Refinement gate: a Gaussian is frozen after this many updates.
    int max_updates = 8;
    double refine_step = 0.002;
    /// Color step during refinement = refine_step * refine_color_ratio.
    double refine_color_ratio = 1.0;
    /// Step of the one-iteration optimization after pose corrections.
    double optimize_step = 0.002;
    int topk_frames = 8;
    double pose_corr_trans_thresh = 0.01; // meters
    double pose_corr_rot_thresh = 0.5;    // degrees

    void validate() const {
        if (num_classes < 1 || num_classes > 255) {
            throw Error("config: num_classes must be in [1, 255]");
        }
        if (stride < 1) {
            throw Error("config: stride must be >= 1");
        }
        if (!(silhouette_threshold > 0.0 && silhouette_threshold <= 1.0)) {
            throw Error("config: silhouette_threshold must be in (0, 1]");
        }
        if (!(prune_opacity >= 0.0 && prune_opacity < 1.0)) {
            throw Error("config: prune_opacity must be in [0, 1)");
        }
        if (max_updates < 0) {
            throw Error("config: max_updates must be >= 0");
        }
        if (!(refine_step >= 0.0) || !(refine_color_ratio >= 0.0) || !(optimize_step >= 0.0)) {
            throw Error("config: step sizes must be >= 0");
        }
        if (topk_frames < 1) {
            throw Error("config: topk_frames must be >= 1");
        }
        if (!(pose_corr_trans_thresh >= 0.0) || !(pose_corr_rot_thresh >= 0.0)) {
            throw Error("config: pose correction thresholds must be >= 0");
        }
    }

    bool operator==(const MapperConfig &) const = default;
};

enum class TrackerMode { ground_truth, icp };

inline const char *to_string(TrackerMode m) { return m == TrackerMode::icp ? "icp" : "ground_truth"; }

struct TrackerConfig {
    TrackerMode mode = TrackerMode::ground_truth;
    double keyframe_flow_thresh = 12.0; // pixels
    int icp_iters = 10;
    double icp_max_corr_dist = 0.1; // meters
    double loop_flow_thresh = 6.0;  // pixels
    int loop_min_separation = 30;   // frames

    void validate() const {
        if (!(keyframe_flow_thresh > 0.0) || !(loop_flow_thresh > 0.0)) {
            throw Error("config: flow thresholds must be positive");
        }
        if (icp_iters < 1) {
            throw Error("config: icp_iters must be positive");
        }
        if (!(icp_max_corr_dist > 0.0)) {
            throw Error("config: icp_max_corr_dist must be positive");
        }
        if (loop_min_separation < 1) {
            throw Error("config: loop_min_separation must be positive");
        }
    }

    bool operator==(const TrackerConfig &) const = default;
};

} // namespace splatmap
