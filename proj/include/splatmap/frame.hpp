// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/geometry.hpp>

#include <optional>

namespace splatmap {

/// One RGB-D observation. Depth is in meters with 0 marking invalid pixels;
/// semantic holds class ids with kUnlabeled for missing labels.
struct Frame {
    int index = 0;
    double timestamp = 0.0;
    ImageD rgb;       // W x H x 3, [0, 1]
    ImageD depth;     // W x H x 1, meters
    LabelImage semantic; // W x H x 1
    std::optional<PoseSE3> pose;
    bool is_keyframe = false;

    int width() const noexcept { return depth.width(); }
    int height() const noexcept { return depth.height(); }

    void validate(const CameraIntrinsics &k) const {
        if (!rgb.same_shape(k.width, k.height, 3)) {
            throw Error("frame rgb does not match intrinsics");
        }
        if (!depth.same_shape(k.width, k.height, 1)) {
            throw Error("frame depth does not match intrinsics");
        }
        if (!semantic.same_shape(k.width, k.height, 1)) {
            throw Error("frame labels do not match intrinsics");
        }
        for (double d : depth.data()) {
            if (!(d >= 0.0)) {
                throw Error("frame depth must be non-negative");
            }
        }
    }

    /// Blank frame of the right shape: black, invalid depth, unlabeled.
    static Frame blank(const CameraIntrinsics &k, int index = 0) {
        Frame f;
        f.index = index;
        f.rgb = ImageD(k.width, k.height, 3, 0.0);
        f.depth = ImageD(k.width, k.height, 1, 0.0);
        f.semantic = LabelImage(k.width, k.height, 1, kUnlabeled);
        return f;
    }
};

} // namespace splatmap
