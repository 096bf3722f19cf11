// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/frame.hpp>
#include <splatmap/losses.hpp>
#include <splatmap/renderer.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace splatmap {

/// Per-block corrections applied while decoding a frame into Gaussians.
struct BlockOffset {
    double dx = 0.0;
    double dy = 0.0;
    double dd = 0.0;
    Vec3 dc = Vec3::Zero();
};

/// Source of decoding offsets for a pixel block. The default predicts none.
class OffsetProvider {
  public:
    virtual ~OffsetProvider() = default;
    /// Offsets for the block whose center pixel is (x, y) with depth d.
    virtual BlockOffset offset(const Frame &frame, int x, int y, double d, int stride) const {
        (void)frame, (void)x, (void)y, (void)d, (void)stride;
        return {};
    }
};

/// A decoded Gaussian and the pixel it came from.
struct PredictedGaussian {
    Gaussian gaussian;
    int x = 0;
    int y = 0;
};

namespace detail {

inline void require_pose(const Frame &f) {
    if (!f.pose) {
        throw Error("frame " + std::to_string(f.index) + " has no pose");
    }
}

/// Center pixel of block b along an axis of length n.
inline int block_center(int b, int stride, int n) { return std::min(b * stride + stride / 2, n - 1); }

} // namespace detail

/// One Gaussian per stride x stride block whose center pixel has valid depth.
inline std::vector<PredictedGaussian> predict_gaussians(const Frame &frame, const CameraIntrinsics &k,
                                                        const PoseSE3 &pose, const MapperConfig &cfg,
                                                        const OffsetProvider &offsets = OffsetProvider{}) {
    cfg.validate();
    frame.validate(k);
    const int s = cfg.stride;
    const int n = cfg.num_classes;
    const double focal = 0.5 * (k.fx + k.fy);
    std::vector<PredictedGaussian> out;
    for (int by = 0; by * s < k.height; ++by) {
        for (int bx = 0; bx * s < k.width; ++bx) {
            const int x = detail::block_center(bx, s, k.width);
            const int y = detail::block_center(by, s, k.height);
            const double d = frame.depth(x, y);
            if (!(d > 0.0)) {
                continue;
            }
            const BlockOffset o = offsets.offset(frame, x, y, d, s);
            if (std::abs(o.dx) > s || std::abs(o.dy) > s || std::abs(o.dd) > 0.1 * d || !o.dc.allFinite()) {
                throw Error("offset provider returned out-of-range offsets");
            }
            PredictedGaussian p;
            p.x = x;
            p.y = y;
            Gaussian &g = p.gaussian;
            g.mean = backproject(x + o.dx, y + o.dy, d + o.dd, k, pose);
            for (int c = 0; c < 3; ++c) {
                g.color[c] = std::clamp(frame.rgb(x, y, c) + o.dc[c], 0.0, 1.0);
            }
            g.log_scale = Vec3::Constant(std::log(d * s / focal));
            g.rotation = identity_quaternion();
            g.opacity_logit = logit(0.7);
            const auto label = frame.semantic(x, y);
            if (label < n) {
                g.class_scores = Eigen::VectorXd::Zero(n);
                g.class_scores[label] = 1.0;
            } else {
                g.class_scores = Eigen::VectorXd::Constant(n, 1.0 / n);
            }
            g.update_count = 0;
            g.epoch = frame.index;
            out.push_back(std::move(p));
        }
    }
    return out;
}

/// 1 where the rendered silhouette is below the threshold (uncovered).
inline LabelImage covisibility_mask(const GaussianMap &map, const CameraIntrinsics &k, const PoseSE3 &pose,
                                    const MapperConfig &cfg) {
    RenderOptions opts;
    opts.channels = kSilhouetteChannel;
    const auto r = render(map, k, pose, opts);
    LabelImage mask(k.width, k.height, 1, 0);
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            mask(x, y) = r.silhouette(x, y) < cfg.silhouette_threshold ? 1 : 0;
        }
    }
    return mask;
}

/// Appends the predictions whose source pixel is uncovered.
inline std::size_t insert_new(GaussianMap &map, std::span<const PredictedGaussian> predicted, const LabelImage &mask) {
    std::size_t inserted = 0;
    for (const auto &p : predicted) {
        if (p.x < 0 || p.y < 0 || p.x >= mask.width() || p.y >= mask.height()) {
            throw Error("predicted Gaussian source pixel outside the mask");
        }
        if (mask(p.x, p.y) != 0) {
            map.append(p.gaussian);
            ++inserted;
        }
    }
    return inserted;
}

/// Removes Gaussians whose opacity is strictly below the prune threshold.
inline std::size_t prune(GaussianMap &map, const MapperConfig &cfg) {
    if (cfg.prune_opacity <= 0.0) {
        return 0;
    }
    // Compared in logit space so a Gaussian created at exactly the threshold
    // survives regardless of sigmoid rounding.
    const double cut = logit(cfg.prune_opacity);
    return map.erase_if([cut](const Gaussian &g) { return g.opacity_logit < cut; });
}

// ---- gradient steps -------------------------------------------------------

/// Which parameter groups a step may move.
struct ParamMask {
    bool color = false;
    bool mean = false;
    bool log_scale = false;
    bool rotation = false;
    bool opacity = false;
};

inline constexpr ParamMask kRefineParams{true, false, true, true, true};
inline constexpr ParamMask kOptimizeParams{false, true, true, true, true};

/// Largest number of step halvings tried before a step is abandoned.
inline constexpr int kMaxHalvings = 8;

namespace detail {

inline constexpr double kStepEpsilon = 1e-10;

inline double normalized(double g) { return g / (std::abs(g) + kStepEpsilon); }

// theta - eta * g / (|g| + eps) on the masked groups, with color_eta for
// colors. Colors stay in [0, 1] and quaternions are renormalized.
inline void apply_step(Gaussian &g, const Gaussian &base, const GaussianGrad &grad, const ParamMask &m, double eta,
                       double color_eta) {
    for (int a = 0; a < 3; ++a) {
        if (m.color) {
            g.color[a] = std::clamp(base.color[a] - color_eta * normalized(grad.color[a]), 0.0, 1.0);
        }
        if (m.mean) {
            g.mean[a] = base.mean[a] - eta * normalized(grad.mean[a]);
        }
        if (m.log_scale) {
            g.log_scale[a] = base.log_scale[a] - eta * normalized(grad.log_scale[a]);
        }
    }
    if (m.rotation) {
        Vec4 q;
        for (int a = 0; a < 4; ++a) {
            q[a] = base.rotation[a] - eta * normalized(grad.rotation[a]);
        }
        g.rotation = q.normalized();
    }
    if (m.opacity) {
        g.opacity_logit = base.opacity_logit - eta * normalized(grad.opacity_logit);
    }
}

inline bool moves(const GaussianGrad &grad, const ParamMask &m) {
    return (m.color && !grad.color.isZero(0.0)) || (m.mean && !grad.mean.isZero(0.0)) ||
           (m.log_scale && !grad.log_scale.isZero(0.0)) || (m.rotation && !grad.rotation.isZero(0.0)) ||
           (m.opacity && grad.opacity_logit != 0.0);
}

enum class Objective { merge, opt };

struct ViewSetEval {
    double loss = 0.0;
    std::vector<GaussianGrad> grads;
    std::vector<bool> contributed;
};

inline unsigned objective_channels(Objective o) {
    return o == Objective::merge ? kAllChannels : (kColorChannel | kDepthChannel);
}

inline MultiViewLoss objective_loss(Objective o, std::span<const LossView> views, const LossWeights &w) {
    return o == Objective::merge ? loss_merge(views, w) : loss_opt(views, w);
}

/// Loss over (frame, pose) views; gradients and contributor flags on request.
inline ViewSetEval evaluate_views(const GaussianMap &map, const CameraIntrinsics &k, std::span<const Frame> frames,
                                  std::span<const PoseSE3> poses, Objective obj, const LossWeights &w,
                                  bool with_grads) {
    RenderOptions opts;
    opts.channels = objective_channels(obj);
    opts.retain_for_backward = with_grads;
    std::vector<RenderOutput> renders;
    renders.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        renders.push_back(render(map, k, poses[i], opts));
    }
    std::vector<LossView> views;
    views.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        views.push_back({renders[i], frames[i]});
    }
    const auto loss = objective_loss(obj, views, w);
    ViewSetEval out;
    out.loss = loss.value;
    if (with_grads) {
        out.grads = zero_grads(map.size(), map.num_classes());
        out.contributed.assign(map.size(), false);
        for (std::size_t v = 0; v < renders.size(); ++v) {
            const auto g = render_backward(map, renders[v], loss.grads[v]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                out.grads[i] += g[i];
            }
            const auto c = renders[v].contributed();
            for (std::size_t i = 0; i < c.size(); ++i) {
                if (c[i]) {
                    out.contributed[i] = true;
                }
            }
        }
    }
    return out;
}

struct StepResult {
    double loss_after = 0.0;
    int halvings = 0;
    bool accepted = false;
    std::size_t moved = 0;
};

/// One normalized gradient step on the selected Gaussians, halving the step
/// until the loss decreases. A step that never decreases the loss is undone.
inline StepResult guarded_step(GaussianMap &map, const CameraIntrinsics &k, std::span<const Frame> frames,
                               std::span<const PoseSE3> poses, Objective obj, const LossWeights &w,
                               const std::vector<GaussianGrad> &grads, const std::vector<bool> &selected,
                               const ParamMask &params, double step, double loss_before,
                               double color_ratio = 1.0) {
    StepResult res;
    res.loss_after = loss_before;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (selected[i] && moves(grads[i], params)) {
            idx.push_back(i);
        }
    }
    if (idx.empty() || step <= 0.0) {
        return res;
    }
    const std::vector<Gaussian> base(map.gaussians().begin(), map.gaussians().end());
    double eta = step;
    for (int h = 0; h <= kMaxHalvings; ++h, eta *= 0.5) {
        auto &gs = map.mutable_gaussians();
        for (std::size_t i : idx) {
            apply_step(gs[i], base[i], grads[i], params, eta, eta * color_ratio);
        }
        const double loss = evaluate_views(map, k, frames, poses, obj, w, false).loss;
        if (loss < loss_before) {
            res.loss_after = loss;
            res.halvings = h;
            res.accepted = true;
            res.moved = idx.size();
            return res;
        }
    }
    map.mutable_gaussians() = base;
    res.halvings = kMaxHalvings;
    return res;
}

} // namespace detail

// ---- refinement -----------------------------------------------------------

struct RefineReport {
    std::size_t views = 0;
    std::size_t updated = 0; // Gaussians whose update count was incremented
    std::size_t gated = 0;   // contributing Gaussians frozen by the update gate
    std::size_t moved = 0;   // Gaussians whose parameters changed
    double loss_before = 0.0;
    double loss_after = 0.0;
    int halvings = 0;
    bool step_accepted = false;
};

/// One guarded gradient step of the merge loss on color, scale, rotation and
/// opacity of every contributing Gaussian still below the update gate.
inline RefineReport refine(GaussianMap &map, const CameraIntrinsics &k, std::span<const Frame> views,
                           const MapperConfig &cfg, const LossWeights &w = {}) {
    cfg.validate();
    RefineReport rep;
    rep.views = views.size();
    if (views.empty() || map.empty()) {
        return rep;
    }
    std::vector<PoseSE3> poses;
    for (const auto &f : views) {
        detail::require_pose(f);
        f.validate(k);
        poses.push_back(*f.pose);
    }
    const auto eval = detail::evaluate_views(map, k, views, poses, detail::Objective::merge, w, true);
    rep.loss_before = eval.loss;
    const auto limit = static_cast<std::uint32_t>(cfg.max_updates);
    std::vector<bool> open(map.size(), false);
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (!eval.contributed[i]) {
            continue;
        }
        if (map[i].update_count < limit) {
            open[i] = true;
        } else {
            ++rep.gated;
        }
    }
    const auto step = detail::guarded_step(map, k, views, poses, detail::Objective::merge, w, eval.grads, open,
                                           kRefineParams, cfg.refine_step, eval.loss, cfg.refine_color_ratio);
    rep.loss_after = step.loss_after;
    rep.halvings = step.halvings;
    rep.step_accepted = step.accepted;
    rep.moved = step.moved;
    auto &gs = map.mutable_gaussians();
    for (std::size_t i = 0; i < gs.size(); ++i) {
        if (open[i]) {
            ++gs[i].update_count;
            ++rep.updated;
        }
    }
    return rep;
}

// ---- supervision views ----------------------------------------------------

/// Fraction of a's valid-depth pixels (sampled every `step`) that land
/// inside the image when reprojected into a camera at pose_b.
inline double view_overlap(const Frame &a, const PoseSE3 &pose_b, const CameraIntrinsics &k, int step = 4) {
    detail::require_pose(a);
    const PoseSE3 b_inv = pose_b.inverse();
    std::size_t valid = 0, inside = 0;
    for (int y = 0; y < k.height; y += step) {
        for (int x = 0; x < k.width; x += step) {
            const double d = a.depth(x, y);
            if (!(d > 0.0)) {
                continue;
            }
            ++valid;
            const auto p = project_camera_point(b_inv.apply(backproject(x, y, d, k, *a.pose)), k);
            if (p && p->u >= -0.5 && p->v >= -0.5 && p->u < k.width - 0.5 && p->v < k.height - 0.5) {
                ++inside;
            }
        }
    }
    return valid == 0 ? 0.0 : static_cast<double>(inside) / static_cast<double>(valid);
}

inline constexpr int kMaxPastViews = 3;
inline constexpr double kMinViewOverlap = 0.2;
inline constexpr int kViewSearchWindow = 10;

/// Indices into `keyframes` (oldest first) of up to three of the most recent
/// keyframes overlapping `current`, newest first.
inline std::vector<std::size_t> select_supervision_views(const Frame &current, std::span<const Frame> keyframes,
                                                         const CameraIntrinsics &k) {
    std::vector<std::size_t> out;
    int searched = 0;
    for (std::size_t j = keyframes.size(); j-- > 0 && searched < kViewSearchWindow; ++searched) {
        if (keyframes[j].index == current.index) {
            continue;
        }
        if (view_overlap(current, *keyframes[j].pose, k) > kMinViewOverlap) {
            out.push_back(j);
            if (static_cast<int>(out.size()) == kMaxPastViews) {
                break;
            }
        }
    }
    return out;
}

// ---- one-iteration optimization --------------------------------------------

/// A processed frame whose pose changed after mapping.
struct CorrectedFrame {
    const Frame *frame = nullptr;
    PoseSE3 old_pose;
    PoseSE3 new_pose;
};

/// Translation (m) plus rotation (rad) change.
inline double pose_change(const PoseSE3 &a, const PoseSE3 &b) { return translation_delta(a, b) + rotation_delta(a, b); }

inline bool is_significant_change(const PoseSE3 &a, const PoseSE3 &b, const MapperConfig &cfg) {
    const double rot_thresh = cfg.pose_corr_rot_thresh * std::numbers::pi / 180.0;
    return translation_delta(a, b) > cfg.pose_corr_trans_thresh || rotation_delta(a, b) > rot_thresh;
}

struct OptimizeReport {
    std::vector<int> frames; // indices of the frames used, by decreasing pose change
    double loss_before = 0.0;
    double loss_after = 0.0;
    int halvings = 0;
    bool applied = false;
    std::size_t moved = 0;
};

/// Frames with significant corrections, ranked by pose change (ties by frame
/// index), truncated to top-k.
inline std::vector<std::size_t> rank_corrections(std::span<const CorrectedFrame> corrected, const MapperConfig &cfg) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < corrected.size(); ++i) {
        if (is_significant_change(corrected[i].old_pose, corrected[i].new_pose, cfg)) {
            idx.push_back(i);
        }
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double ma = pose_change(corrected[a].old_pose, corrected[a].new_pose);
        const double mb = pose_change(corrected[b].old_pose, corrected[b].new_pose);
        if (ma != mb) {
            return ma > mb;
        }
        return corrected[a].frame->index < corrected[b].frame->index;
    });
    if (idx.size() > static_cast<std::size_t>(cfg.topk_frames)) {
        idx.resize(static_cast<std::size_t>(cfg.topk_frames));
    }
    return idx;
}

/// A single guarded step of the post-correction loss on mean, scale, rotation
/// and opacity of all Gaussians, rendered at the corrected poses.
inline OptimizeReport one_iteration_optimize(GaussianMap &map, const CameraIntrinsics &k,
                                             std::span<const CorrectedFrame> corrected, const MapperConfig &cfg,
                                             const LossWeights &w = {}) {
    cfg.validate();
    OptimizeReport rep;
    for (const auto &c : corrected) {
        if (c.frame == nullptr) {
            throw Error("corrected frame is null");
        }
    }
    const auto ranked = rank_corrections(corrected, cfg);
    if (ranked.empty() || map.empty()) {
        return rep;
    }
    std::vector<Frame> frames;
    std::vector<PoseSE3> poses;
    for (std::size_t i : ranked) {
        frames.push_back(*corrected[i].frame);
        frames.back().pose = corrected[i].new_pose;
        frames.back().validate(k);
        poses.push_back(corrected[i].new_pose);
        rep.frames.push_back(corrected[i].frame->index);
    }
    const auto eval = detail::evaluate_views(map, k, frames, poses, detail::Objective::opt, w, true);
    rep.loss_before = eval.loss;
    const std::vector<bool> all(map.size(), true);
    const auto step = detail::guarded_step(map, k, frames, poses, detail::Objective::opt, w, eval.grads, all,
                                           kOptimizeParams, cfg.optimize_step, eval.loss);
    rep.loss_after = step.loss_after;
    rep.halvings = step.halvings;
    rep.applied = step.accepted;
    rep.moved = step.moved;
    return rep;
}

/// loss_opt of the map over frames at the given poses.
inline double opt_loss(const GaussianMap &map, const CameraIntrinsics &k, std::span<const Frame> frames,
                       std::span<const PoseSE3> poses, const LossWeights &w = {}) {
    return detail::evaluate_views(map, k, frames, poses, detail::Objective::opt, w, false).loss;
}

// ---- lifecycle driver -----------------------------------------------------

struct FrameReport {
    int index = 0;
    std::size_t predicted = 0;
    std::size_t inserted = 0;
    std::size_t pruned = 0;
    std::size_t map_size = 0;
    std::vector<int> supervision; // frame indices used for refinement
    RefineReport refine;
};

/// Owns the map and the keyframe history and runs
/// predict -> covisibility -> insert -> refine -> prune per keyframe.
class Mapper {
  public:
    Mapper(const CameraIntrinsics &k, MapperConfig cfg, LossWeights w = {})
        : k_(k), map_(cfg), weights_(w) {
        k_.validate();
    }

    const GaussianMap &map() const noexcept { return map_; }
    GaussianMap &map() noexcept { return map_; }
    const CameraIntrinsics &intrinsics() const noexcept { return k_; }
    const MapperConfig &config() const noexcept { return map_.config(); }
    std::span<const Frame> keyframes() const noexcept { return keyframes_; }

    void set_offset_provider(const OffsetProvider *p) { offsets_ = p; }

    FrameReport process_keyframe(const Frame &frame) {
        detail::require_pose(frame);
        frame.validate(k_);
        const MapperConfig &cfg = map_.config();
        FrameReport rep;
        rep.index = frame.index;
        const OffsetProvider default_offsets;
        const auto predicted = predict_gaussians(frame, k_, *frame.pose, cfg, offsets_ ? *offsets_ : default_offsets);
        rep.predicted = predicted.size();
        const auto mask = covisibility_mask(map_, k_, *frame.pose, cfg);
        rep.inserted = insert_new(map_, predicted, mask);

        std::vector<Frame> views{frame};
        rep.supervision.push_back(frame.index);
        for (std::size_t j : select_supervision_views(frame, keyframes_, k_)) {
            views.push_back(keyframes_[j]);
            rep.supervision.push_back(keyframes_[j].index);
        }
        rep.refine = refine(map_, k_, views, cfg, weights_);
        rep.pruned = prune(map_, cfg);
        rep.map_size = map_.size();

        Frame stored = frame;
        stored.is_keyframe = true;
        keyframes_.push_back(std::move(stored));
        return rep;
    }

    /// Replaces keyframe poses with new ones (by frame index) and runs the
    /// one-iteration optimization over the significant corrections.
    OptimizeReport apply_corrections(std::span<const std::pair<int, PoseSE3>> new_poses) {
        std::vector<CorrectedFrame> corrected;
        for (const auto &[index, pose] : new_poses) {
            for (const auto &kf : keyframes_) {
                if (kf.index == index) {
                    corrected.push_back({&kf, *kf.pose, pose});
                }
            }
        }
        auto rep = one_iteration_optimize(map_, k_, corrected, map_.config(), weights_);
        for (const auto &[index, pose] : new_poses) {
            for (auto &kf : keyframes_) {
                if (kf.index == index) {
                    kf.pose = pose;
                }
            }
        }
        return rep;
    }

  private:
    CameraIntrinsics k_;
    GaussianMap map_;
    LossWeights weights_;
    const OffsetProvider *offsets_ = nullptr;
    std::vector<Frame> keyframes_;
};

} // namespace splatmap
