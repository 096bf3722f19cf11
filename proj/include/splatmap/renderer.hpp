// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/detail/parallel.hpp>
#include <splatmap/gaussian.hpp>

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace splatmap {

// Rasterizer constants.
inline constexpr double kNearPlane = 0.01;         // meters
inline constexpr double kLowPassVariance = 0.3;    // px^2 added to the 2D covariance diagonal
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr int kTileSize = 16;

/// A Gaussian splatted onto the image plane.
struct Projected2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity(); // includes the low-pass term
    double depth_cam = 0.0;
    std::uint32_t gaussian_index = 0;
    /// Half-widths (px) of the box outside which alpha < kAlphaMin.
    Vec2 extent = Vec2::Zero();
};

namespace detail {

// Squared Mahalanobis radius at which o * exp(-r^2 / 2) drops to kAlphaMin.
inline double cutoff_radius_sq(double opacity) {
    const double v = 2.0 * std::log(opacity / kAlphaMin);
    return v > 0.0 ? v : 0.0;
}

inline Eigen::Matrix<double, 2, 3> perspective_jacobian(const Vec3 &t, const CameraIntrinsics &k) {
    const double iz = 1.0 / t.z();
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx * iz, 0.0, -k.fx * t.x() * iz * iz, 0.0, k.fy * iz, -k.fy * t.y() * iz * iz;
    return j;
}

// Splats far outside the view get their covariance Jacobian evaluated on a
// ray clamped to this multiple of the half field of view. Without it a
// Gaussian near the camera plane but off to the side projects to a
// screen-filling ellipse.
inline constexpr double kFrustumGuard = 1.3;

struct CovarianceJacobian {
    Eigen::Matrix<double, 2, 3> j;
    Vec3 t; // camera-frame point the Jacobian was evaluated at
    bool clamped_x = false;
    bool clamped_y = false;
};

inline CovarianceJacobian covariance_jacobian(const Vec3 &t, const CameraIntrinsics &k) {
    CovarianceJacobian c;
    c.t = t;
    const double lim_x = kFrustumGuard * 0.5 * k.width / k.fx;
    const double lim_y = kFrustumGuard * 0.5 * k.height / k.fy;
    const double u = t.x() / t.z(), v = t.y() / t.z();
    if (std::abs(u) > lim_x) {
        c.t.x() = std::copysign(lim_x, u) * t.z();
        c.clamped_x = true;
    }
    if (std::abs(v) > lim_y) {
        c.t.y() = std::copysign(lim_y, v) * t.z();
        c.clamped_y = true;
    }
    c.j = perspective_jacobian(c.t, k);
    return c;
}

inline std::optional<Projected2D> project_with(const Gaussian &g, std::uint32_t index, const CameraIntrinsics &k,
                                               const Mat3 &r_cw, const Vec3 &t_cw) {
    const Vec3 t = r_cw * g.mean + t_cw;
    if (!(t.z() > kNearPlane)) {
        return std::nullopt;
    }
    const Eigen::Matrix<double, 2, 3> m = covariance_jacobian(t, k).j * r_cw;
    Projected2D p;
    p.cov2d = m * covariance3d(g) * m.transpose();
    p.cov2d(0, 0) += kLowPassVariance;
    p.cov2d(1, 1) += kLowPassVariance;
    p.mean2d = Vec2(k.fx * t.x() / t.z() + k.cx, k.fy * t.y() / t.z() + k.cy);
    p.depth_cam = t.z();
    p.gaussian_index = index;
    const double r2 = cutoff_radius_sq(g.opacity());
    p.extent = Vec2(std::sqrt(r2 * p.cov2d(0, 0)), std::sqrt(r2 * p.cov2d(1, 1)));
    if (r2 <= 0.0 || p.mean2d.x() + p.extent.x() < 0.0 || p.mean2d.x() - p.extent.x() > k.width - 1 ||
        p.mean2d.y() + p.extent.y() < 0.0 || p.mean2d.y() - p.extent.y() > k.height - 1) {
        return std::nullopt;
    }
    return p;
}

} // namespace detail

/// EWA projection of one Gaussian. Nothing when the center is within the
/// near plane or the splat's footprint misses the image.
inline std::optional<Projected2D> project_gaussian(const Gaussian &g, const CameraIntrinsics &k,
                                                   const PoseSE3 &cam_to_world, std::uint32_t index = 0) {
    const PoseSE3 w2c = cam_to_world.inverse();
    return detail::project_with(g, index, k, w2c.rotation_matrix(), w2c.translation);
}

enum Channel : unsigned {
    kColorChannel = 1u,
    kDepthChannel = 2u,
    kSemanticChannel = 4u,
    kSilhouetteChannel = 8u,
    kAllChannels = 15u,
};

struct RenderOptions {
    unsigned channels = kAllChannels;
    bool early_termination = true;
    /// Keep per-pixel contributor lists so render_backward can run.
    bool retain_for_backward = false;
};

/// Rendered images plus, optionally, what the backward pass needs.
struct RenderOutput {
    ImageD color;      // W x H x 3
    ImageD depth;      // W x H x 1
    ImageD semantic;   // W x H x N
    ImageD silhouette; // W x H x 1
    unsigned channels = 0;

    struct Contributor {
        std::uint32_t slot; // index into Tile::splats
        double alpha;
    };
    struct Tile {
        int x0 = 0, y0 = 0, x1 = 0, y1 = 0;       // pixel bounds, [x0, x1) x [y0, y1)
        std::vector<std::uint32_t> splats;        // positions in RenderOutput::splats, front to back
        std::vector<Contributor> contributors;    // concatenated per-pixel lists
        std::vector<std::uint32_t> pixel_offsets; // size = pixels + 1
    };

    // Backward cache.
    bool has_backward_cache = false;
    std::uint64_t map_revision = 0;
    std::size_t map_size = 0;
    CameraIntrinsics intrinsics;
    PoseSE3 pose;
    std::vector<Projected2D> splats; // sorted by (depth_cam, gaussian_index)
    std::vector<Tile> tiles;

    /// Per map index: did the Gaussian composite into at least one pixel?
    std::vector<bool> contributed() const {
        std::vector<bool> out(map_size, false);
        for (const auto &tile : tiles) {
            for (const auto &c : tile.contributors) {
                out[splats[tile.splats[c.slot]].gaussian_index] = true;
            }
        }
        return out;
    }

    /// Argmax over the semantic channels per pixel.
    LabelImage labels() const {
        LabelImage out(semantic.width(), semantic.height(), 1, 0);
        const int n = semantic.channels();
        for (int y = 0; y < semantic.height(); ++y) {
            for (int x = 0; x < semantic.width(); ++x) {
                const double *s = semantic.pixel(x, y);
                out(x, y) = static_cast<std::uint8_t>(std::max_element(s, s + n) - s);
            }
        }
        return out;
    }
};

namespace detail {

struct SplatShading {
    Vec2 mean;
    Vec2 reach; // padded extent; beyond it alpha is certainly below kAlphaMin
    double a, b, c; // inverse 2D covariance [[a, b], [b, c]]
    double opacity;
    double depth;
    const Gaussian *g;
};

inline SplatShading shading_for(const Projected2D &p, const Gaussian &g) {
    const double det = p.cov2d.determinant();
    const Vec2 reach = p.extent * (1.0 + 1e-6) + Vec2::Constant(1e-6);
    return {p.mean2d, reach, p.cov2d(1, 1) / det, -p.cov2d(0, 1) / det, p.cov2d(0, 0) / det, g.opacity(),
            p.depth_cam, &g};
}

inline std::vector<Projected2D> project_all(const GaussianMap &map, const CameraIntrinsics &k,
                                            const PoseSE3 &cam_to_world) {
    const PoseSE3 w2c = cam_to_world.inverse();
    const Mat3 r_cw = w2c.rotation_matrix();
    const Vec3 t_cw = w2c.translation;
    std::vector<std::optional<Projected2D>> slots(map.size());
    parallel_for(map.size(), [&](std::size_t i) {
        slots[i] = project_with(map[i], static_cast<std::uint32_t>(i), k, r_cw, t_cw);
    });
    std::vector<Projected2D> out;
    for (auto &s : slots) {
        if (s) {
            out.push_back(*s);
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const Projected2D &l, const Projected2D &r) {
        return l.depth_cam < r.depth_cam || (l.depth_cam == r.depth_cam && l.gaussian_index < r.gaussian_index);
    });
    return out;
}

} // namespace detail

/// Tile-based front-to-back compositing of the map seen from cam_to_world.
/// Color, depth, semantic scores and silhouette all follow
///   Q_p = sum_i q_i alpha_i prod_{j<i} (1 - alpha_j).
inline RenderOutput render(const GaussianMap &map, const CameraIntrinsics &k, const PoseSE3 &cam_to_world,
                           const RenderOptions &opts = {}) {
    k.validate();
    const int w = k.width, h = k.height, n = map.num_classes();
    RenderOutput out;
    out.channels = opts.channels | kSilhouetteChannel;
    if (opts.channels & kColorChannel) {
        out.color = ImageD(w, h, 3, 0.0);
    }
    if (opts.channels & kDepthChannel) {
        out.depth = ImageD(w, h, 1, 0.0);
    }
    if (opts.channels & kSemanticChannel) {
        out.semantic = ImageD(w, h, n, 0.0);
    }
    out.silhouette = ImageD(w, h, 1, 0.0);
    out.map_revision = map.revision();
    out.map_size = map.size();
    out.intrinsics = k;
    out.pose = cam_to_world;
    out.splats = detail::project_all(map, k, cam_to_world);

    std::vector<detail::SplatShading> shade;
    shade.reserve(out.splats.size());
    for (const auto &p : out.splats) {
        shade.push_back(detail::shading_for(p, map[p.gaussian_index]));
    }

    const int tiles_x = (w + kTileSize - 1) / kTileSize;
    const int tiles_y = (h + kTileSize - 1) / kTileSize;
    out.tiles.resize(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (int ty = 0; ty < tiles_y; ++ty) {
        for (int tx = 0; tx < tiles_x; ++tx) {
            auto &t = out.tiles[static_cast<std::size_t>(ty) * tiles_x + tx];
            t.x0 = tx * kTileSize;
            t.y0 = ty * kTileSize;
            t.x1 = std::min(w, t.x0 + kTileSize);
            t.y1 = std::min(h, t.y0 + kTileSize);
        }
    }
    // Bin splats by footprint; a one-pixel pad keeps boundary pixels safe.
    for (std::size_t i = 0; i < out.splats.size(); ++i) {
        const auto &p = out.splats[i];
        const int px0 = std::max(0, static_cast<int>(std::floor(p.mean2d.x() - p.extent.x())) - 1);
        const int px1 = std::min(w - 1, static_cast<int>(std::ceil(p.mean2d.x() + p.extent.x())) + 1);
        const int py0 = std::max(0, static_cast<int>(std::floor(p.mean2d.y() - p.extent.y())) - 1);
        const int py1 = std::min(h - 1, static_cast<int>(std::ceil(p.mean2d.y() + p.extent.y())) + 1);
        if (px0 > px1 || py0 > py1) {
            continue;
        }
        for (int ty = py0 / kTileSize; ty <= py1 / kTileSize; ++ty) {
            for (int tx = px0 / kTileSize; tx <= px1 / kTileSize; ++tx) {
                out.tiles[static_cast<std::size_t>(ty) * tiles_x + tx].splats.push_back(static_cast<std::uint32_t>(i));
            }
        }
    }

    const bool want_color = opts.channels & kColorChannel;
    const bool want_depth = opts.channels & kDepthChannel;
    const bool want_sem = opts.channels & kSemanticChannel;
    const bool retain = opts.retain_for_backward;

    detail::parallel_for(out.tiles.size(), [&](std::size_t ti) {
        auto &tile = out.tiles[ti];
        if (retain) {
            tile.pixel_offsets.reserve(static_cast<std::size_t>(tile.x1 - tile.x0) * (tile.y1 - tile.y0) + 1);
            tile.pixel_offsets.push_back(0);
        }
        // Candidate slots per row and per run of kChunk pixels, kept in depth
        // order; a splat is dropped only where every pixel is beyond its reach.
        constexpr int kChunk = 4;
        std::vector<std::uint32_t> row_slots, chunk_slots;
        for (int y = tile.y0; y < tile.y1; ++y) {
            row_slots.clear();
            for (std::uint32_t slot = 0; slot < tile.splats.size(); ++slot) {
                const auto &s = shade[tile.splats[slot]];
                if (std::abs(y - s.mean.y()) <= s.reach.y()) {
                    row_slots.push_back(slot);
                }
            }
            for (int x = tile.x0; x < tile.x1; ++x) {
                if ((x - tile.x0) % kChunk == 0) {
                    const double cx0 = x, cx1 = std::min(x + kChunk, tile.x1) - 1;
                    chunk_slots.clear();
                    for (std::uint32_t slot : row_slots) {
                        const auto &s = shade[tile.splats[slot]];
                        if (s.mean.x() + s.reach.x() >= cx0 && s.mean.x() - s.reach.x() <= cx1) {
                            chunk_slots.push_back(slot);
                        }
                    }
                }
                double t_acc = 1.0;
                double sil = 0.0;
                Vec3 col = Vec3::Zero();
                double dep = 0.0;
                double *sem = want_sem ? out.semantic.pixel(x, y) : nullptr;
                for (std::uint32_t slot : chunk_slots) {
                    const auto &s = shade[tile.splats[slot]];
                    const double dx = x - s.mean.x();
                    const double dy = y - s.mean.y();
                    if (std::abs(dx) > s.reach.x() || std::abs(dy) > s.reach.y()) {
                        continue;
                    }
                    const double power = -0.5 * (s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy);
                    const double alpha = std::min(kAlphaMax, s.opacity * std::exp(power));
                    if (alpha < kAlphaMin) {
                        continue;
                    }
                    const double next_t = t_acc * (1.0 - alpha);
                    if (opts.early_termination && next_t < kMinTransmittance) {
                        break;
                    }
                    const double wgt = alpha * t_acc;
                    sil += wgt;
                    if (want_color) {
                        col += wgt * s.g->color;
                    }
                    if (want_depth) {
                        dep += wgt * s.depth;
                    }
                    if (sem) {
                        for (int c = 0; c < n; ++c) {
                            sem[c] += wgt * s.g->class_scores[c];
                        }
                    }
                    if (retain) {
                        tile.contributors.push_back({slot, alpha});
                    }
                    t_acc = next_t;
                }
                out.silhouette(x, y) = sil;
                if (want_color) {
                    for (int c = 0; c < 3; ++c) {
                        out.color(x, y, c) = col[c];
                    }
                }
                if (want_depth) {
                    out.depth(x, y) = dep;
                }
                if (retain) {
                    tile.pixel_offsets.push_back(static_cast<std::uint32_t>(tile.contributors.size()));
                }
            }
        }
    });

    if (retain) {
        out.has_backward_cache = true;
    } else {
        out.tiles.clear();
        out.splats.clear();
    }
    return out;
}

/// Composited quantities of one pixel.
struct PixelComposite {
    Vec3 color = Vec3::Zero();
    double depth = 0.0;
    Eigen::VectorXd semantic;
    double silhouette = 0.0;
};

/// One splat as seen by the reference compositor.
struct SplatRecord {
    Projected2D projected;
    double opacity;
    Vec3 color;
    Eigen::VectorXd class_scores;
};

/// Direct evaluation of the compositing sums at one pixel over splats given
/// front to back. No tiling and no early termination; same alpha clamp and
/// skip threshold as render().
inline PixelComposite composite_pixel_reference(std::span<const SplatRecord> splats, const Vec2 &pixel,
                                                int num_classes) {
    PixelComposite out;
    out.semantic = Eigen::VectorXd::Zero(num_classes);
    double transmittance = 1.0;
    for (const auto &s : splats) {
        const Vec2 delta = pixel - s.projected.mean2d;
        const Mat2 inv = s.projected.cov2d.inverse();
        const double alpha = std::min(kAlphaMax, s.opacity * std::exp(-0.5 * delta.dot(inv * delta)));
        if (alpha < kAlphaMin) {
            continue;
        }
        out.color += s.color * alpha * transmittance;
        out.depth += s.projected.depth_cam * alpha * transmittance;
        out.semantic += s.class_scores * alpha * transmittance;
        out.silhouette += alpha * transmittance;
        transmittance *= 1.0 - alpha;
    }
    return out;
}

/// Splat records of the map from a viewpoint, sorted front to back.
inline std::vector<SplatRecord> reference_splats(const GaussianMap &map, const CameraIntrinsics &k,
                                                 const PoseSE3 &cam_to_world) {
    std::vector<SplatRecord> out;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (auto p = project_gaussian(map[i], k, cam_to_world, static_cast<std::uint32_t>(i))) {
            out.push_back({*p, map[i].opacity(), map[i].color, map[i].class_scores});
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const SplatRecord &l, const SplatRecord &r) {
        return l.projected.depth_cam < r.projected.depth_cam ||
               (l.projected.depth_cam == r.projected.depth_cam &&
                l.projected.gaussian_index < r.projected.gaussian_index);
    });
    return out;
}

/// Upstream gradients dL/d(rendered image). Empty images count as zero.
struct PixelGrads {
    ImageD color;
    ImageD depth;
    ImageD semantic;
    ImageD silhouette;
};

/// dL/d(parameter) for one Gaussian.
struct GaussianGrad {
    Vec3 color = Vec3::Zero();
    Vec3 mean = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();
    double opacity_logit = 0.0;
    Eigen::VectorXd class_scores;

    bool is_zero() const {
        return color.isZero(0.0) && mean.isZero(0.0) && log_scale.isZero(0.0) && rotation.isZero(0.0) &&
               opacity_logit == 0.0 && class_scores.isZero(0.0);
    }

    GaussianGrad &operator+=(const GaussianGrad &o) {
        color += o.color;
        mean += o.mean;
        log_scale += o.log_scale;
        rotation += o.rotation;
        opacity_logit += o.opacity_logit;
        class_scores += o.class_scores;
        return *this;
    }
};

inline std::vector<GaussianGrad> zero_grads(std::size_t count, int num_classes) {
    GaussianGrad z;
    z.class_scores = Eigen::VectorXd::Zero(num_classes);
    return std::vector<GaussianGrad>(count, z);
}

namespace detail {

// Per-splat accumulator layout for image-space gradients.
enum : int { kGMx, kGMy, kGA, kGB, kGC, kGOpacity, kGDepth, kGColor, kGClass = kGColor + 3 };

// dL/dq for q (unnormalized) given dL/dR at R = R(q / |q|).
inline Vec4 rotation_matrix_backward(const Vec4 &q, const Mat3 &g) {
    const double n = q.norm();
    const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Vec4 d;
    d[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                  w * g(2, 1) - 2.0 * x * g(2, 2));
    d[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                  z * g(2, 1) - 2.0 * y * g(2, 2));
    d[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                  y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    const Vec4 qn = q / n;
    return (d - qn * qn.dot(d)) / n;
}

} // namespace detail

/// Analytic gradients of a pixel loss with respect to every Gaussian
/// parameter, given the matching forward render (retain_for_backward) and
/// dL/d(rendered image). Result is indexed like the map.
inline std::vector<GaussianGrad> render_backward(const GaussianMap &map, const RenderOutput &fwd,
                                                 const PixelGrads &upstream) {
    if (!fwd.has_backward_cache || fwd.map_revision != map.revision() || fwd.map_size != map.size()) {
        throw Error("backward without matching forward");
    }
    const CameraIntrinsics &k = fwd.intrinsics;
    const int n = map.num_classes();
    const auto check = [&](const ImageD &img, int ch, unsigned bit, const char *name) {
        if (img.empty()) {
            return false;
        }
        if (!img.same_shape(k.width, k.height, ch)) {
            throw Error(std::string("gradient image shape mismatch: ") + name);
        }
        if (!(fwd.channels & bit)) {
            throw Error(std::string("gradient supplied for a channel that was not rendered: ") + name);
        }
        return true;
    };
    const bool g_color = check(upstream.color, 3, kColorChannel, "color");
    const bool g_depth = check(upstream.depth, 1, kDepthChannel, "depth");
    const bool g_sem = check(upstream.semantic, n, kSemanticChannel, "semantic");
    const bool g_sil = check(upstream.silhouette, 1, kSilhouetteChannel, "silhouette");

    const int stride = detail::kGClass + n;
    std::vector<detail::SplatShading> shade;
    shade.reserve(fwd.splats.size());
    for (const auto &p : fwd.splats) {
        shade.push_back(detail::shading_for(p, map[p.gaussian_index]));
    }

    // Tile-local partial sums, reduced below in tile order for reproducibility.
    std::vector<std::vector<double>> partial(fwd.tiles.size());
    detail::parallel_for(fwd.tiles.size(), [&](std::size_t ti) {
        const auto &tile = fwd.tiles[ti];
        if (tile.contributors.empty()) {
            return;
        }
        auto &acc = partial[ti];
        acc.assign(tile.splats.size() * stride, 0.0);
        std::vector<double> trans;
        Eigen::VectorXd gs = Eigen::VectorXd::Zero(n);
        std::size_t pix = 0;
        for (int y = tile.y0; y < tile.y1; ++y) {
            for (int x = tile.x0; x < tile.x1; ++x, ++pix) {
                const std::uint32_t b = tile.pixel_offsets[pix];
                const std::uint32_t e = tile.pixel_offsets[pix + 1];
                if (b == e) {
                    continue;
                }
                const Vec3 gc = g_color ? Vec3(upstream.color(x, y, 0), upstream.color(x, y, 1), upstream.color(x, y, 2))
                                        : Vec3::Zero();
                const double gd = g_depth ? upstream.depth(x, y) : 0.0;
                const double gsil = g_sil ? upstream.silhouette(x, y) : 0.0;
                if (g_sem) {
                    for (int c = 0; c < n; ++c) {
                        gs[c] = upstream.semantic(x, y, c);
                    }
                }
                if (gc.isZero(0.0) && gd == 0.0 && gsil == 0.0 && (!g_sem || gs.isZero(0.0))) {
                    continue;
                }
                trans.resize(e - b);
                double t_acc = 1.0;
                for (std::uint32_t i = b; i < e; ++i) {
                    trans[i - b] = t_acc;
                    t_acc *= 1.0 - tile.contributors[i].alpha;
                }
                double behind = 0.0; // sum over later contributors of (g . q) alpha T
                for (std::uint32_t i = e; i-- > b;) {
                    const auto &con = tile.contributors[i];
                    const auto &s = shade[tile.splats[con.slot]];
                    const double alpha = con.alpha;
                    const double t_i = trans[i - b];
                    double gq = gsil + gd * s.depth + gc.dot(s.g->color);
                    if (g_sem) {
                        gq += gs.dot(s.g->class_scores);
                    }
                    const double dl_dalpha = t_i * gq - behind / (1.0 - alpha);
                    behind += gq * alpha * t_i;

                    double *a = acc.data() + static_cast<std::size_t>(con.slot) * stride;
                    const double wgt = alpha * t_i;
                    a[detail::kGDepth] += wgt * gd;
                    for (int c = 0; c < 3; ++c) {
                        a[detail::kGColor + c] += wgt * gc[c];
                    }
                    if (g_sem) {
                        for (int c = 0; c < n; ++c) {
                            a[detail::kGClass + c] += wgt * gs[c];
                        }
                    }
                    const double dx = x - s.mean.x();
                    const double dy = y - s.mean.y();
                    const double gauss = std::exp(-0.5 * (s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy));
                    if (s.opacity * gauss > kAlphaMax) {
                        continue; // clamped: alpha is locally constant
                    }
                    a[detail::kGOpacity] += dl_dalpha * gauss;
                    const double da = dl_dalpha * alpha;
                    a[detail::kGMx] += da * (s.a * dx + s.b * dy);
                    a[detail::kGMy] += da * (s.b * dx + s.c * dy);
                    a[detail::kGA] += -0.5 * da * dx * dx;
                    a[detail::kGB] += -da * dx * dy;
                    a[detail::kGC] += -0.5 * da * dy * dy;
                }
            }
        }
    });

    std::vector<double> total(fwd.splats.size() * stride, 0.0);
    for (std::size_t ti = 0; ti < fwd.tiles.size(); ++ti) {
        if (partial[ti].empty()) {
            continue;
        }
        const auto &tile = fwd.tiles[ti];
        for (std::size_t slot = 0; slot < tile.splats.size(); ++slot) {
            double *dst = total.data() + static_cast<std::size_t>(tile.splats[slot]) * stride;
            const double *src = partial[ti].data() + slot * stride;
            for (int j = 0; j < stride; ++j) {
                dst[j] += src[j];
            }
        }
    }

    auto grads = zero_grads(map.size(), n);
    const PoseSE3 w2c = fwd.pose.inverse();
    const Mat3 r_cw = w2c.rotation_matrix();
    const Vec3 t_cw = w2c.translation;
    detail::parallel_for(fwd.splats.size(), [&](std::size_t si) {
        const double *a = total.data() + si * stride;
        const auto &p = fwd.splats[si];
        const Gaussian &g = map[p.gaussian_index];
        GaussianGrad &out = grads[p.gaussian_index];

        out.color = Vec3(a[detail::kGColor], a[detail::kGColor + 1], a[detail::kGColor + 2]);
        for (int c = 0; c < n; ++c) {
            out.class_scores[c] = a[detail::kGClass + c];
        }
        const double o = g.opacity();
        out.opacity_logit = a[detail::kGOpacity] * o * (1.0 - o);

        const Vec3 t = r_cw * g.mean + t_cw;
        const auto j = detail::perspective_jacobian(t, k);
        const auto cj = detail::covariance_jacobian(t, k);
        const Mat3 rq = quaternion_to_rotation_matrix(g.rotation);
        const Vec3 var = (2.0 * g.log_scale).array().exp();
        const Mat3 sigma = rq * var.asDiagonal() * rq.transpose();
        const Eigen::Matrix<double, 2, 3> m = cj.j * r_cw;
        const Mat2 inv = p.cov2d.inverse();

        Mat2 d_inv;
        d_inv << a[detail::kGA], 0.5 * a[detail::kGB], 0.5 * a[detail::kGB], a[detail::kGC];
        const Mat2 d_cov2d = -inv * d_inv * inv;
        const Mat3 d_sigma = m.transpose() * d_cov2d * m;
        const Eigen::Matrix<double, 2, 3> d_m = 2.0 * d_cov2d * m * sigma;
        const Eigen::Matrix<double, 2, 3> d_j = d_m * r_cw.transpose();

        const double iz = 1.0 / t.z();
        const double iz2 = iz * iz;
        const Vec2 d_mean2d(a[detail::kGMx], a[detail::kGMy]);
        Vec3 d_t = j.transpose() * d_mean2d;
        d_t.z() += a[detail::kGDepth];
        // A clamped axis holds its ray slope fixed, so its entry depends on z only.
        d_t.z() += -k.fx * iz2 * d_j(0, 0) - k.fy * iz2 * d_j(1, 1);
        d_t.z() += (cj.clamped_x ? 1.0 : 2.0) * k.fx * cj.t.x() * iz2 * iz * d_j(0, 2);
        d_t.z() += (cj.clamped_y ? 1.0 : 2.0) * k.fy * cj.t.y() * iz2 * iz * d_j(1, 2);
        if (!cj.clamped_x) {
            d_t.x() += -k.fx * iz2 * d_j(0, 2);
        }
        if (!cj.clamped_y) {
            d_t.y() += -k.fy * iz2 * d_j(1, 2);
        }
        out.mean = r_cw.transpose() * d_t;

        const Mat3 rt_ds_r = rq.transpose() * d_sigma * rq;
        for (int i = 0; i < 3; ++i) {
            out.log_scale[i] = rt_ds_r(i, i) * 2.0 * var[i];
        }
        const Mat3 d_rq = 2.0 * d_sigma * rq * var.asDiagonal();
        out.rotation = detail::rotation_matrix_backward(g.rotation, d_rq);
    });
    return grads;
}

} // namespace splatmap
