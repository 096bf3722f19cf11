// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <splatmap/gaussian.hpp>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace splatmap;
using splatmap::testing::make_intrinsics;
using splatmap::testing::random_quaternion;

namespace {

// Rodrigues construction from axis-angle, independent of the quaternion path.
Mat3 axis_angle_matrix(const Vec3 &axis, double angle) {
    const Vec3 a = axis.normalized();
    Mat3 kx;
    kx << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
    return Mat3::Identity() + std::sin(angle) * kx + (1.0 - std::cos(angle)) * kx * kx;
}

PoseSE3 random_pose(std::mt19937 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    const Vec4 q = random_quaternion(rng);
    return PoseSE3(Eigen::Quaterniond(q[0], q[1], q[2], q[3]), Vec3(n(rng), n(rng), n(rng)));
}

} // namespace

TEST(Quaternion, IdentityGivesIdentityMatrix) {
    EXPECT_TRUE(quaternion_to_rotation_matrix(identity_quaternion()).isApprox(Mat3::Identity(), 1e-15));
}

TEST(Quaternion, QuarterTurnAboutZ) {
    const double h = std::sqrt(0.5);
    Mat3 expected;
    expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    EXPECT_LT((quaternion_to_rotation_matrix(Vec4(h, 0, 0, h)) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Quaternion, ZeroNormIsDegenerate) {
    EXPECT_THROW(
        {
            try {
                quaternion_to_rotation_matrix(Vec4::Zero());
            } catch (const Error &e) {
                EXPECT_STREQ(e.what(), "degenerate quaternion");
                throw;
            }
        },
        Error);
}

TEST(Quaternion, RandomMatchesAxisAngleAndIsOrthonormal) {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> ang(-M_PI, M_PI);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
        const double angle = ang(rng);
        const Vec4 q(std::cos(angle / 2), std::sin(angle / 2) * axis.x(), std::sin(angle / 2) * axis.y(),
                     std::sin(angle / 2) * axis.z());
        // Slightly off-unit input is renormalized internally.
        const Mat3 r = quaternion_to_rotation_matrix(q * (1.0 + 5e-4));
        EXPECT_LT((r - axis_angle_matrix(axis, angle)).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
    }
}

TEST(Covariance, UnitScaleIdentityRotation) {
    Gaussian g;
    EXPECT_TRUE(covariance3d(g).isApprox(Mat3::Identity(), 1e-15));
}

TEST(Covariance, AxisAligned) {
    Gaussian g;
    g.log_scale = Vec3(std::log(2.0), 0.0, 0.0);
    const Mat3 expected = Vec3(4.0, 1.0, 1.0).asDiagonal();
    EXPECT_LT((covariance3d(g) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Covariance, EigenvaluesAreSquaredScalesAndSignFlipInvariant) {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> s(-3.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        Gaussian g;
        g.log_scale = Vec3(s(rng), s(rng), s(rng));
        g.rotation = random_quaternion(rng);
        const Mat3 sigma = covariance3d(g);
        EXPECT_LT((sigma - sigma.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> eig(sigma);
        std::array<double, 3> expected = {std::exp(2 * g.log_scale[0]), std::exp(2 * g.log_scale[1]),
                                          std::exp(2 * g.log_scale[2])};
        std::sort(expected.begin(), expected.end());
        for (int k = 0; k < 3; ++k) {
            EXPECT_NEAR(eig.eigenvalues()[k], expected[k], 1e-9);
            EXPECT_GE(eig.eigenvalues()[k], 0.0);
        }
        Gaussian flipped = g;
        flipped.rotation = -g.rotation;
        EXPECT_LT((covariance3d(flipped) - sigma).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Pose, GroupLaws) {
    std::mt19937 rng(3);
    for (int i = 0; i < 100; ++i) {
        const PoseSE3 a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
        EXPECT_LT((a.compose(a.inverse()).matrix() - Mat4::Identity()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((a.inverse().compose(a).matrix() - Mat4::Identity()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((((a * b) * c).matrix() - (a * (b * c)).matrix()).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(std::abs(a.rotation.norm() - 1.0), 0.0, 1e-6);
        const Vec3 p(0.3, -1.2, 2.0);
        EXPECT_LT((a.inverse().apply(a.apply(p)) - p).norm(), 1e-9);
    }
}

TEST(Pose, FromMatrixRoundTripAndRejectsSingular) {
    std::mt19937 rng(5);
    const PoseSE3 a = random_pose(rng);
    EXPECT_LT((PoseSE3::from_matrix(a.matrix()).matrix() - a.matrix()).cwiseAbs().maxCoeff(), 1e-12);
    Mat4 singular = Mat4::Identity();
    singular(2, 2) = 0.0;
    EXPECT_THROW(PoseSE3::from_matrix(singular), Error);
    Mat4 bad = Mat4::Identity();
    bad(0, 0) = -std::numeric_limits<double>::infinity();
    EXPECT_THROW(PoseSE3::from_matrix(bad), Error);
}

TEST(Intrinsics, Validation) {
    auto k = make_intrinsics(32, 24, 30.0);
    EXPECT_NO_THROW(k.validate());
    auto bad = k;
    bad.fx = 0.0;
    EXPECT_THROW(bad.validate(), Error);
    bad = k;
    bad.cx = 32.0;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(Backproject, PrincipalPointAndOneFocalOffset) {
    auto k = make_intrinsics(64, 48, 50.0);
    EXPECT_LT((backproject(k.cx, k.cy, 1.0, k, PoseSE3::identity()) - Vec3(0, 0, 1)).norm(), 1e-15);
    EXPECT_LT((backproject(k.cx + k.fx, k.cy, 2.0, k, PoseSE3::identity()) - Vec3(2, 0, 2)).norm(), 1e-15);
}

TEST(Backproject, InvalidDepth) {
    auto k = make_intrinsics(64, 48, 50.0);
    EXPECT_THROW(backproject(1, 1, 0.0, k, PoseSE3::identity()), Error);
    EXPECT_THROW(backproject(1, 1, -1.0, k, PoseSE3::identity()), Error);
}

TEST(Backproject, RoundTripThroughProjection) {
    std::mt19937 rng(13);
    auto k = make_intrinsics(640, 480, 525.0);
    std::uniform_real_distribution<double> ux(0, 639), uy(0, 479), ud(0.1, 10.0);
    double worst_px = 0.0, worst_d = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const PoseSE3 pose = random_pose(rng);
        const double u = ux(rng), v = uy(rng), d = ud(rng);
        const auto p = project(backproject(u, v, d, k, pose), k, pose);
        ASSERT_TRUE(p.has_value());
        worst_px = std::max({worst_px, std::abs(p->u - u), std::abs(p->v - v)});
        worst_d = std::max(worst_d, std::abs(p->depth - d));
    }
    EXPECT_LT(worst_px, 1e-6);
    EXPECT_LT(worst_d, 1e-9);
}

TEST(Backproject, HomogeneousInDepthForIdentityRotation) {
    auto k = make_intrinsics(64, 48, 50.0);
    PoseSE3 pose;
    pose.translation = Vec3(0.5, -0.2, 1.0);
    const Vec3 a = backproject(10, 20, 1.3, k, pose);
    const Vec3 b = backproject(10, 20, 2.6, k, pose);
    EXPECT_LT((b - (pose.translation + 2.0 * (a - pose.translation))).norm(), 1e-12);
}

TEST(GaussianMap, AppendChecksClassCountAndBumpsRevision) {
    GaussianMap map;
    const auto r0 = map.revision();
    Gaussian g;
    g.class_scores = Eigen::VectorXd::Zero(5);
    EXPECT_THROW(map.append(g), Error);
    g.class_scores = Eigen::VectorXd::Zero(kDefaultNumClasses);
    map.append(g);
    EXPECT_NE(map.revision(), r0);
    EXPECT_EQ(map.size(), 1u);
}
