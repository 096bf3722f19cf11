// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/image.hpp>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>

namespace splatmap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Quaternions are stored as (w, x, y, z) 4-vectors.
inline Vec4 identity_quaternion() { return Vec4(1.0, 0.0, 0.0, 0.0); }

/// Rotation matrix of q / |q|. Throws on a zero quaternion.
inline Mat3 quaternion_to_rotation_matrix(const Vec4 &q) {
    const double n = q.norm();
    if (!(n > 1e-12) || !std::isfinite(n)) {
        throw Error("degenerate quaternion");
    }
    const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

/// Rigid transform, camera-to-world by convention: apply() maps a
/// camera-frame point into the world frame.
struct PoseSE3 {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Vec3 translation = Vec3::Zero();

    PoseSE3() = default;
    PoseSE3(const Eigen::Quaterniond &q, const Vec3 &t) : rotation(q.normalized()), translation(t) {}
    PoseSE3(const Mat3 &r, const Vec3 &t) : rotation(Eigen::Quaterniond(r).normalized()), translation(t) {}

    static PoseSE3 identity() { return {}; }

    /// From a 4x4 homogeneous matrix. The rotation block must be orthonormal.
    static PoseSE3 from_matrix(const Mat4 &m) {
        if (!m.allFinite()) {
            throw Error("non-finite pose matrix");
        }
        const Mat3 r = m.topLeftCorner<3, 3>();
        if (std::abs(r.determinant()) < 1e-9) {
            throw Error("non-invertible pose matrix");
        }
        if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-3) {
            throw Error("pose rotation block is not orthonormal");
        }
        // Project onto SO(3) so later compositions stay orthonormal.
        Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 ortho = svd.matrixU() * svd.matrixV().transpose();
        if (ortho.determinant() < 0) {
            throw Error("pose rotation block is a reflection");
        }
        return PoseSE3(ortho, m.topRightCorner<3, 1>());
    }

    Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

    Mat4 matrix() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = rotation_matrix();
        m.topRightCorner<3, 1>() = translation;
        return m;
    }

    Vec3 apply(const Vec3 &p) const { return rotation * p + translation; }

    PoseSE3 inverse() const {
        const Eigen::Quaterniond inv = rotation.conjugate();
        return PoseSE3(inv, -(inv * translation));
    }

    /// this * other: apply other first.
    PoseSE3 compose(const PoseSE3 &other) const {
        return PoseSE3(rotation * other.rotation, rotation * other.translation + translation);
    }

    PoseSE3 operator*(const PoseSE3 &other) const { return compose(other); }

    /// (w, x, y, z) 4-vector form.
    Vec4 quaternion_wxyz() const { return Vec4(rotation.w(), rotation.x(), rotation.y(), rotation.z()); }

    bool operator==(const PoseSE3 &o) const {
        return rotation.coeffs() == o.rotation.coeffs() && translation == o.translation;
    }
};

/// Translation distance in meters between two poses.
inline double translation_delta(const PoseSE3 &a, const PoseSE3 &b) {
    return (a.translation - b.translation).norm();
}

/// Relative rotation angle in radians between two poses.
inline double rotation_delta(const PoseSE3 &a, const PoseSE3 &b) {
    const double d = std::abs(a.rotation.normalized().dot(b.rotation.normalized()));
    return 2.0 * std::acos(std::min(1.0, d));
}

/// Pinhole intrinsics. Pixel (u, v) has its center at integer coordinates.
struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
    /// Raw depth units per meter (5000 for TUM, 1000 for ScanNet).
    double depth_scale = 1000.0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0)) {
            throw Error("intrinsics: focal lengths must be positive");
        }
        if (width <= 0 || height <= 0) {
            throw Error("intrinsics: image size must be positive");
        }
        if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
            throw Error("intrinsics: principal point outside the image");
        }
        if (!(depth_scale > 0.0)) {
            throw Error("intrinsics: depth_scale must be positive");
        }
    }

    bool operator==(const CameraIntrinsics &) const = default;
};

/// Lifts pixel (u, v) at depth d (meters, along +z) into the world frame.
inline Vec3 backproject(double u, double v, double d, const CameraIntrinsics &k, const PoseSE3 &cam_to_world) {
    if (!(d > 0.0)) {
        throw Error("invalid depth");
    }
    const Vec3 p_cam((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d);
    return cam_to_world.apply(p_cam);
}

/// Pixel coordinates and depth of a camera-frame point. Nothing when z <= 0.
struct PixelDepth {
    double u;
    double v;
    double depth;
};

inline std::optional<PixelDepth> project_camera_point(const Vec3 &p_cam, const CameraIntrinsics &k) {
    if (!(p_cam.z() > 0.0)) {
        return std::nullopt;
    }
    return PixelDepth{k.fx * p_cam.x() / p_cam.z() + k.cx, k.fy * p_cam.y() / p_cam.z() + k.cy, p_cam.z()};
}

inline std::optional<PixelDepth> project(const Vec3 &p_world, const CameraIntrinsics &k, const PoseSE3 &cam_to_world) {
    return project_camera_point(cam_to_world.inverse().apply(p_world), k);
}

} // namespace splatmap
