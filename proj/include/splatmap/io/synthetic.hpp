// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

// Procedural RGB-D sequence: a textured box room with a few boxes inside,
// ray cast exactly at pixel centers. Every surface carries a class id, so
// the sequence has dense ground-truth depth, color, labels and poses.

#pragma once

#include <splatmap/frame.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace splatmap::synthetic {

struct RoomConfig {
    int width = 160;
    int height = 120;
    double hfov_deg = 70.0;
    int frames = 100;
    std::uint32_t seed = 1;

    void validate() const {
        if (width < 16 || height < 16) {
            throw Error("synthetic: image must be at least 16x16");
        }
        if (!(hfov_deg > 10.0 && hfov_deg < 150.0)) {
            throw Error("synthetic: hfov_deg must be in (10, 150)");
        }
        if (frames < 0) {
            throw Error("synthetic: frames must be >= 0");
        }
    }

    bool operator==(const RoomConfig &) const = default;
};

/// Axis-aligned box with one class id and texture per face.
struct Box {
    Vec3 lo;
    Vec3 hi;
    std::array<std::uint8_t, 6> face_class; // -x, +x, -y, +y, -z, +z
};

struct Sphere {
    Vec3 center;
    double radius;
    std::uint8_t cls;
};

struct SurfaceHit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 point = Vec3::Zero();
    int surface = -1; // box index * 6 + face, then one id per sphere
};

/// Smooth per-surface texture: base color plus two low-frequency waves.
struct Texture {
    Vec3 base;
    Vec3 amp;
    double k1u, k1v, p1, k2u, k2v, p2;
};

class Room {
  public:
    explicit Room(RoomConfig cfg = {}) : cfg_(cfg) {
        cfg_.validate();
        // World frame: x right, y down, z forward (camera-aligned at yaw 0).
        // Index 0 is the room shell, seen from inside.
        boxes_.push_back({Vec3(-2.5, -1.3, -2.5), Vec3(2.5, 1.3, 2.5), {0, 1, 5, 4, 2, 3}});
        boxes_.push_back({Vec3(-1.6, 0.6, 1.0), Vec3(-0.8, 1.3, 1.7), {6, 6, 6, 6, 6, 6}});
        boxes_.push_back({Vec3(0.7, 0.3, 1.3), Vec3(1.5, 1.3, 1.9), {7, 7, 7, 7, 7, 7}});
        boxes_.push_back({Vec3(-0.2, 0.9, 0.2), Vec3(0.4, 1.3, 0.8), {8, 8, 8, 8, 8, 8}});
        // A pillar and a wall-mounted shelf give sideways-facing surfaces.
        boxes_.push_back({Vec3(0.1, -1.3, 1.9), Vec3(0.5, 1.3, 2.3), {9, 9, 9, 9, 9, 9}});
        boxes_.push_back({Vec3(-2.5, -0.4, 1.2), Vec3(-1.9, -0.2, 2.5), {10, 10, 10, 10, 10, 10}});
        // Curved surfaces keep every translation observable to ICP.
        spheres_.push_back({Vec3(1.2, 0.85, 0.4), 0.45, 11});
        spheres_.push_back({Vec3(-0.9, -0.3, 2.0), 0.35, 12});
        spheres_.push_back({Vec3(1.6, -0.6, 2.0), 0.3, 12});
        std::mt19937 rng(cfg_.seed);
        const auto u01 = [&rng] { return static_cast<double>(rng()) / 4294967296.0; };
        textures_.resize(boxes_.size() * 6 + spheres_.size());
        for (auto &t : textures_) {
            t.base = Vec3(0.25 + 0.5 * u01(), 0.25 + 0.5 * u01(), 0.25 + 0.5 * u01());
            t.amp = Vec3(0.06 + 0.08 * u01(), 0.06 + 0.08 * u01(), 0.06 + 0.08 * u01());
            // Wavelengths between roughly 0.8 m and 2 m.
            const double two_pi = 2.0 * std::numbers::pi;
            t.k1u = two_pi / (0.8 + 1.2 * u01());
            t.k1v = two_pi / (0.8 + 1.2 * u01());
            t.p1 = two_pi * u01();
            t.k2u = two_pi / (0.8 + 1.2 * u01());
            t.k2v = two_pi / (0.8 + 1.2 * u01());
            t.p2 = two_pi * u01();
        }
    }

    const RoomConfig &config() const noexcept { return cfg_; }

    CameraIntrinsics intrinsics() const {
        CameraIntrinsics k;
        k.width = cfg_.width;
        k.height = cfg_.height;
        k.fx = 0.5 * cfg_.width / std::tan(0.5 * cfg_.hfov_deg * std::numbers::pi / 180.0);
        k.fy = k.fx;
        k.cx = 0.5 * (cfg_.width - 1);
        k.cy = 0.5 * (cfg_.height - 1);
        k.depth_scale = 1000.0;
        return k;
    }

    /// Closed loop: the camera sweeps its yaw out and back while drifting
    /// on a small ellipse, returning to its start at the last frame.
    PoseSE3 pose(int i) const {
        const double n = std::max(cfg_.frames, 1);
        const double s = 2.0 * std::numbers::pi * i / n;
        const double yaw = 0.6 * std::sin(s);
        const double pitch = -0.15 - 0.05 * std::sin(2.0 * s); // negative looks down
        const Vec3 position(0.5 * std::sin(s), -0.1 + 0.1 * std::sin(2.0 * s), -1.2 + 0.3 * (1.0 - std::cos(s)));
        const Eigen::Quaterniond q = Eigen::AngleAxisd(yaw, Vec3::UnitY()) * Eigen::AngleAxisd(pitch, Vec3::UnitX());
        return PoseSE3(q, position);
    }

    double timestamp(int i) const { return i / 30.0; }

    SurfaceHit cast(const Vec3 &origin, const Vec3 &dir) const {
        SurfaceHit best;
        for (std::size_t b = 0; b < boxes_.size(); ++b) {
            const auto h = b == 0 ? exit_hit(boxes_[b], origin, dir) : entry_hit(boxes_[b], origin, dir);
            if (h.surface >= 0 && h.t < best.t) {
                best = h;
                best.surface += static_cast<int>(b) * 6;
            }
        }
        for (std::size_t s = 0; s < spheres_.size(); ++s) {
            const auto h = sphere_hit(spheres_[s], origin, dir);
            if (h.surface >= 0 && h.t < best.t) {
                best = h;
                best.surface = num_box_surfaces() + static_cast<int>(s);
            }
        }
        return best;
    }

    std::uint8_t surface_class(int surface) const {
        if (surface >= num_box_surfaces()) {
            return spheres_[surface - num_box_surfaces()].cls;
        }
        return boxes_[surface / 6].face_class[surface % 6];
    }

    Vec3 surface_color(int surface, const Vec3 &p) const {
        double u = 0.0, v = 0.0;
        if (surface >= num_box_surfaces()) {
            // Arc-length coordinates: longitude around y and latitude.
            const Sphere &sp = spheres_[surface - num_box_surfaces()];
            const Vec3 d = (p - sp.center) / sp.radius;
            u = sp.radius * std::atan2(d.x(), d.z());
            v = sp.radius * std::asin(std::clamp(d.y(), -1.0, 1.0));
        } else {
            const int axis = (surface % 6) / 2;
            u = p[(axis + 1) % 3];
            v = p[(axis + 2) % 3];
        }
        const Texture &t = textures_[surface];
        const double w1 = std::sin(t.k1u * u + t.p1) * std::sin(t.k1v * v + 0.5 * t.p1);
        const double w2 = std::sin(t.k2u * u - t.k2v * v + t.p2);
        return (t.base + t.amp * (0.7 * w1 + 0.3 * w2)).cwiseMax(0.0).cwiseMin(1.0);
    }

    /// Exact ray-cast frame i.
    Frame frame(int i) const {
        const auto k = intrinsics();
        Frame f = Frame::blank(k, i);
        f.timestamp = timestamp(i);
        f.pose = pose(i);
        const Mat3 r = f.pose->rotation_matrix();
        const Vec3 o = f.pose->translation;
        for (int y = 0; y < k.height; ++y) {
            for (int x = 0; x < k.width; ++x) {
                const Vec3 d_cam((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
                const auto hit = cast(o, r * d_cam);
                if (hit.surface < 0) {
                    continue;
                }
                // d_cam has unit z, so the ray parameter is the z-depth.
                f.depth(x, y) = hit.t;
                f.semantic(x, y) = surface_class(hit.surface);
                const Vec3 c = surface_color(hit.surface, hit.point);
                for (int ch = 0; ch < 3; ++ch) {
                    f.rgb(x, y, ch) = c[ch];
                }
            }
        }
        return f;
    }

  private:
    int num_box_surfaces() const { return static_cast<int>(boxes_.size()) * 6; }

    static SurfaceHit sphere_hit(const Sphere &s, const Vec3 &o, const Vec3 &d) {
        const Vec3 oc = o - s.center;
        const double a = d.squaredNorm();
        const double b = oc.dot(d);
        const double c = oc.squaredNorm() - s.radius * s.radius;
        const double disc = b * b - a * c;
        if (disc < 0.0) {
            return {};
        }
        const double t = (-b - std::sqrt(disc)) / a;
        if (!(t > 0.0)) {
            return {};
        }
        return {t, o + t * d, 0};
    }

    static SurfaceHit entry_hit(const Box &b, const Vec3 &o, const Vec3 &d) {
        double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
        int face = -1;
        for (int a = 0; a < 3; ++a) {
            if (d[a] == 0.0) {
                if (o[a] < b.lo[a] || o[a] > b.hi[a]) {
                    return {};
                }
                continue;
            }
            double ta = (b.lo[a] - o[a]) / d[a], tb = (b.hi[a] - o[a]) / d[a];
            int fa = 2 * a, fb = 2 * a + 1;
            if (ta > tb) {
                std::swap(ta, tb);
                std::swap(fa, fb);
            }
            if (ta > t0) {
                t0 = ta;
                face = fa;
            }
            t1 = std::min(t1, tb);
        }
        if (t0 > t1 || t0 <= 0.0 || face < 0) {
            return {};
        }
        return {t0, o + t0 * d, face};
    }

    static SurfaceHit exit_hit(const Box &b, const Vec3 &o, const Vec3 &d) {
        double t1 = std::numeric_limits<double>::infinity();
        int face = -1;
        for (int a = 0; a < 3; ++a) {
            if (d[a] > 0.0) {
                const double t = (b.hi[a] - o[a]) / d[a];
                if (t < t1) {
                    t1 = t;
                    face = 2 * a + 1;
                }
            } else if (d[a] < 0.0) {
                const double t = (b.lo[a] - o[a]) / d[a];
                if (t < t1) {
                    t1 = t;
                    face = 2 * a;
                }
            }
        }
        if (face < 0 || !(t1 > 0.0)) {
            return {};
        }
        return {t1, o + t1 * d, face};
    }

    RoomConfig cfg_;
    std::vector<Box> boxes_;
    std::vector<Sphere> spheres_;
    std::vector<Texture> textures_;
};

} // namespace splatmap::synthetic
