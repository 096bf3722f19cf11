// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/config.hpp>
#include <splatmap/frame.hpp>
#include <splatmap/mapper.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace splatmap {

/// A pose with the frame and time it belongs to.
struct StampedPose {
    int index = 0;
    double timestamp = 0.0;
    PoseSE3 pose;
};

using Trajectory = std::vector<StampedPose>;

inline constexpr double kMaxTimestampGap = 0.02; // seconds

/// Pairs (i into a, j into b) by nearest timestamp within max_gap. Each b
/// entry is used at most once; a is scanned in order.
inline std::vector<std::pair<std::size_t, std::size_t>> associate(const Trajectory &a, const Trajectory &b,
                                                                  double max_gap = kMaxTimestampGap) {
    std::vector<std::size_t> order(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) {
        order[j] = j;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return b[l].timestamp < b[r].timestamp; });
    std::vector<bool> used(b.size(), false);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i].timestamp;
        auto it = std::lower_bound(order.begin(), order.end(), t,
                                   [&](std::size_t j, double v) { return b[j].timestamp < v; });
        std::optional<std::size_t> best;
        double best_gap = max_gap;
        for (auto cand : {it, it == order.begin() ? order.end() : std::prev(it)}) {
            if (cand == order.end() || used[*cand]) {
                continue;
            }
            const double gap = std::abs(b[*cand].timestamp - t);
            if (gap <= best_gap && (!best || gap < best_gap)) {
                best = *cand;
                best_gap = gap;
            }
        }
        if (best) {
            used[*best] = true;
            out.emplace_back(i, *best);
        }
    }
    return out;
}

// ---- flow and keyframes ----------------------------------------------------

inline constexpr int kFlowGridStep = 4;

/// Mean pixel displacement of prev's valid-depth pixels (on a grid) when
/// reprojected into a camera at cur_pose. Pixels leaving the image are ignored.
inline double mean_reprojection_flow(const Frame &prev, const PoseSE3 &cur_pose, const CameraIntrinsics &k,
                                     int step = kFlowGridStep) {
    if (!prev.pose) {
        throw Error("mean_reprojection_flow: previous frame has no pose");
    }
    const PoseSE3 world_to_cur = cur_pose.inverse();
    double sum = 0.0;
    std::size_t count = 0;
    for (int y = 0; y < k.height; y += step) {
        for (int x = 0; x < k.width; x += step) {
            const double d = prev.depth(x, y);
            if (!(d > 0.0)) {
                continue;
            }
            const auto p = project_camera_point(world_to_cur.apply(backproject(x, y, d, k, *prev.pose)), k);
            if (!p || p->u < -0.5 || p->v < -0.5 || p->u >= k.width - 0.5 || p->v >= k.height - 0.5) {
                continue;
            }
            sum += std::hypot(p->u - x, p->v - y);
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

inline bool select_keyframe(double flow, const TrackerConfig &cfg) { return flow > cfg.keyframe_flow_thresh; }

/// Loop-closure candidate gate: small flow between frames far apart in time.
inline bool is_loop_candidate(double flow, int frame_gap, const TrackerConfig &cfg) {
    return flow < cfg.loop_flow_thresh && frame_gap >= cfg.loop_min_separation;
}

// ---- ICP ---------------------------------------------------------------------

struct IcpResult {
    PoseSE3 pose;             // camera-to-world of the current frame
    double residual = 0.0;    // median |point-to-plane distance|, meters
    bool flagged = false;     // residual above kIcpFlagResidual
    std::size_t correspondences = 0;
    int iterations = 0;
};

inline constexpr double kIcpFlagResidual = 0.05;
inline constexpr std::size_t kIcpMinCorrespondences = 100;
inline constexpr int kIcpSourceStep = 2;
/// Correspondences whose normals disagree by more than ~25 degrees are dropped.
inline constexpr double kIcpMinNormalDot = 0.9;
/// The first half of the iterations associate with a wider gate so that
/// off-plane structure is in the system before the pose settles; with only
/// walls and floor the solve can slide along their intersection.
inline constexpr double kIcpCoarseDistScale = 3.0;
inline constexpr double kIcpCoarseNormalDot = 0.7;

namespace detail {

struct VertexNormalMap {
    int width = 0, height = 0;
    std::vector<Vec3> vertex;
    std::vector<Vec3> normal; // zero where undefined

    bool valid(int x, int y) const { return !normal[static_cast<std::size_t>(y) * width + x].isZero(0.0); }
};

// Camera-frame vertices and normals from cross products of central differences.
inline VertexNormalMap vertex_normal_map(const Frame &f, const CameraIntrinsics &k, double max_jump) {
    VertexNormalMap m;
    m.width = k.width;
    m.height = k.height;
    m.vertex.assign(static_cast<std::size_t>(k.width) * k.height, Vec3::Zero());
    m.normal.assign(m.vertex.size(), Vec3::Zero());
    const PoseSE3 id;
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            const double d = f.depth(x, y);
            if (d > 0.0) {
                m.vertex[static_cast<std::size_t>(y) * k.width + x] = backproject(x, y, d, k, id);
            }
        }
    }
    const auto depth_ok = [&](int x, int y, double d) {
        const double e = f.depth(x, y);
        return e > 0.0 && std::abs(e - d) <= max_jump;
    };
    for (int y = 1; y + 1 < k.height; ++y) {
        for (int x = 1; x + 1 < k.width; ++x) {
            const double d = f.depth(x, y);
            if (!(d > 0.0) || !depth_ok(x - 1, y, d) || !depth_ok(x + 1, y, d) || !depth_ok(x, y - 1, d) ||
                !depth_ok(x, y + 1, d)) {
                continue;
            }
            const auto v = [&](int u, int w) { return m.vertex[static_cast<std::size_t>(w) * k.width + u]; };
            Vec3 n = (v(x + 1, y) - v(x - 1, y)).cross(v(x, y + 1) - v(x, y - 1));
            const double len = n.norm();
            if (!(len > 0.0)) {
                continue;
            }
            n /= len;
            if (n.dot(v(x, y)) > 0.0) {
                n = -n; // face the camera
            }
            m.normal[static_cast<std::size_t>(y) * k.width + x] = n;
        }
    }
    return m;
}

inline Mat3 so3_exp(const Vec3 &w) {
    const double theta = w.norm();
    if (theta < 1e-12) {
        Mat3 wx;
        wx << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
        return Mat3::Identity() + wx;
    }
    return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

struct Correspondence {
    Vec3 source; // current-frame point mapped into the reference camera
    Vec3 target;
    Vec3 normal;
};

inline std::vector<Correspondence> associate_projective(const VertexNormalMap &cur, const VertexNormalMap &ref,
                                                        const PoseSE3 &cur_to_ref, const CameraIntrinsics &k,
                                                        double max_dist, double min_normal_dot = kIcpMinNormalDot) {
    std::vector<Correspondence> out;
    const Mat3 r = cur_to_ref.rotation_matrix();
    for (int y = 0; y < k.height; y += kIcpSourceStep) {
        for (int x = 0; x < k.width; x += kIcpSourceStep) {
            if (!cur.valid(x, y)) {
                continue;
            }
            const std::size_t s = static_cast<std::size_t>(y) * k.width + x;
            const Vec3 q = cur_to_ref.apply(cur.vertex[s]);
            const auto p = project_camera_point(q, k);
            if (!p) {
                continue;
            }
            const long u = std::lround(p->u), v = std::lround(p->v);
            if (u < 0 || v < 0 || u >= k.width || v >= k.height || !ref.valid(static_cast<int>(u), static_cast<int>(v))) {
                continue;
            }
            const std::size_t i = static_cast<std::size_t>(v) * k.width + static_cast<std::size_t>(u);
            if ((q - ref.vertex[i]).norm() > max_dist || (r * cur.normal[s]).dot(ref.normal[i]) < min_normal_dot) {
                continue;
            }
            out.push_back({q, ref.vertex[i], ref.normal[i]});
        }
    }
    return out;
}

inline double median_abs_residual(const std::vector<Correspondence> &c) {
    std::vector<double> r;
    r.reserve(c.size());
    for (const auto &e : c) {
        r.push_back(std::abs(e.normal.dot(e.source - e.target)));
    }
    if (r.empty()) {
        return 0.0;
    }
    const auto mid = r.begin() + static_cast<std::ptrdiff_t>(r.size() / 2);
    std::nth_element(r.begin(), mid, r.end());
    if (r.size() % 2 == 1) {
        return *mid;
    }
    const double hi = *mid;
    return 0.5 * (hi + *std::max_element(r.begin(), mid));
}

} // namespace detail

/// Point-to-plane ICP of cur against ref (which has a pose), starting from
/// init (cur's camera-to-world guess). Gauss-Newton on a left-multiplied
/// twist of the cur-to-ref transform.
inline IcpResult estimate_pose_icp(const Frame &cur, const Frame &ref, const PoseSE3 &init, const CameraIntrinsics &k,
                                   const TrackerConfig &cfg) {
    cfg.validate();
    if (!ref.pose) {
        throw Error("estimate_pose_icp: reference frame has no pose");
    }
    cur.validate(k);
    ref.validate(k);
    const auto ref_map = detail::vertex_normal_map(ref, k, cfg.icp_max_corr_dist);
    const auto cur_map = detail::vertex_normal_map(cur, k, cfg.icp_max_corr_dist);
    Mat3 r = (ref.pose->inverse() * init).rotation_matrix();
    Vec3 t = (ref.pose->inverse() * init).translation;
    const auto current = [&] { return PoseSE3(Eigen::Quaterniond(r), t); };

    IcpResult res;
    for (int it = 0; it < cfg.icp_iters; ++it) {
        const bool coarse = it < cfg.icp_iters / 2;
        const auto corr = detail::associate_projective(cur_map, ref_map, current(), k,
                                                       cfg.icp_max_corr_dist * (coarse ? kIcpCoarseDistScale : 1.0),
                                                       coarse ? kIcpCoarseNormalDot : kIcpMinNormalDot);
        if (corr.size() < kIcpMinCorrespondences) {
            throw Error("insufficient overlap");
        }
        Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
        for (const auto &c : corr) {
            Eigen::Matrix<double, 6, 1> j;
            j.head<3>() = c.normal;
            j.tail<3>() = c.source.cross(c.normal);
            const double e = c.normal.dot(c.source - c.target);
            h += j * j.transpose();
            b += j * e;
        }
        // A whisper of damping keeps unobservable directions (e.g. sliding
        // along a single plane) at their initial value.
        h.diagonal().array() += 1e-9 * (h.trace() / 6.0 + 1e-12);
        const Eigen::Matrix<double, 6, 1> xi = -h.ldlt().solve(b);
        res.iterations = it + 1;
        if (!xi.allFinite()) {
            break;
        }
        const Mat3 dr = detail::so3_exp(xi.tail<3>());
        r = dr * r;
        t = dr * t + xi.head<3>();
        // Re-orthonormalize against drift.
        r = Eigen::Quaterniond(r).normalized().toRotationMatrix();
        if (xi.norm() < 1e-10) {
            break;
        }
    }
    const auto corr = detail::associate_projective(cur_map, ref_map, current(), k, cfg.icp_max_corr_dist);
    if (corr.size() < kIcpMinCorrespondences) {
        throw Error("insufficient overlap");
    }
    res.correspondences = corr.size();
    res.residual = detail::median_abs_residual(corr);
    res.flagged = res.residual > kIcpFlagResidual;
    res.pose = *ref.pose * current();
    return res;
}

// ---- pose corrections ----------------------------------------------------------

struct PoseCorrection {
    int frame_index = 0;
    PoseSE3 old_pose;
    PoseSE3 new_pose;
    double magnitude = 0.0; // meters + radians
};

/// Corrections for frames (associated by timestamp) whose pose moved more
/// than the mapper's correction thresholds.
inline std::vector<PoseCorrection> detect_pose_corrections(const Trajectory &old_traj, const Trajectory &new_traj,
                                                           const MapperConfig &cfg) {
    std::vector<PoseCorrection> out;
    for (const auto &[i, j] : associate(old_traj, new_traj)) {
        const auto &a = old_traj[i].pose;
        const auto &b = new_traj[j].pose;
        if (is_significant_change(a, b, cfg)) {
            out.push_back({old_traj[i].index, a, b, pose_change(a, b)});
        }
    }
    return out;
}

// ---- tracker -------------------------------------------------------------------

struct TrackResult {
    PoseSE3 pose;
    double flow = 0.0; // from the last keyframe
    bool is_keyframe = false;
    std::optional<IcpResult> icp;
};

/// Pose provider. Ground-truth mode replays frame poses; ICP mode chains
/// frame-to-frame ICP from the first frame's pose (identity if absent).
class Tracker {
  public:
    Tracker(const CameraIntrinsics &k, TrackerConfig cfg) : k_(k), cfg_(cfg) { cfg_.validate(); }

    const TrackerConfig &config() const noexcept { return cfg_; }

    TrackResult track(const Frame &frame) {
        TrackResult res;
        if (cfg_.mode == TrackerMode::ground_truth) {
            if (!frame.pose) {
                throw Error("ground-truth tracking needs a pose for frame " + std::to_string(frame.index));
            }
            res.pose = *frame.pose;
        } else if (!prev_) {
            res.pose = frame.pose ? *frame.pose : PoseSE3::identity();
        } else {
            res.icp = estimate_pose_icp(frame, *prev_, *prev_->pose, k_, cfg_);
            res.pose = res.icp->pose;
        }
        if (!last_keyframe_) {
            res.is_keyframe = true;
        } else {
            res.flow = mean_reprojection_flow(*last_keyframe_, res.pose, k_);
            res.is_keyframe = select_keyframe(res.flow, cfg_);
        }
        Frame posed = frame;
        posed.pose = res.pose;
        posed.is_keyframe = res.is_keyframe;
        if (res.is_keyframe) {
            last_keyframe_ = posed;
        }
        if (cfg_.mode == TrackerMode::icp) {
            prev_ = std::move(posed);
        }
        return res;
    }

  private:
    CameraIntrinsics k_;
    TrackerConfig cfg_;
    std::optional<Frame> prev_;
    std::optional<Frame> last_keyframe_;
};

} // namespace splatmap
