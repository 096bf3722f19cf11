// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/config.hpp>
#include <splatmap/geometry.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace splatmap {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One anisotropic 3D Gaussian. Scale is stored as the natural log of the
/// per-axis standard deviation and opacity as a logit, so unconstrained
/// updates cannot leave the valid domain.
struct Gaussian {
    Vec3 color = Vec3::Zero();
    Vec3 mean = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation = identity_quaternion(); // (w, x, y, z)
    double opacity_logit = 0.0;
    Eigen::VectorXd class_scores;
    std::uint32_t update_count = 0;
    std::int64_t epoch = 0;

    double opacity() const { return sigmoid(opacity_logit); }
    Vec3 scale() const { return log_scale.array().exp(); }

    bool operator==(const Gaussian &o) const {
        return color == o.color && mean == o.mean && log_scale == o.log_scale && rotation == o.rotation &&
               opacity_logit == o.opacity_logit && class_scores.size() == o.class_scores.size() &&
               class_scores == o.class_scores && update_count == o.update_count && epoch == o.epoch;
    }
};

/// Sigma = R diag(exp(2 s)) R^T.
inline Mat3 covariance3d(const Gaussian &g) {
    const Mat3 r = quaternion_to_rotation_matrix(g.rotation);
    const Vec3 var = (2.0 * g.log_scale).array().exp();
    return r * var.asDiagonal() * r.transpose();
}

/// Argmax of the class score vector (lowest index on ties).
inline int dominant_class(const Eigen::VectorXd &scores) {
    if (scores.size() == 0) {
        return 0;
    }
    Eigen::Index best = 0;
    scores.maxCoeff(&best);
    return static_cast<int>(best);
}

namespace detail {
inline std::uint64_t next_map_revision() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}
} // namespace detail

/// Ordered store of Gaussians. Every mutating accessor stamps a new revision
/// so renders can detect that the map changed underneath them.
class GaussianMap {
  public:
    explicit GaussianMap(MapperConfig config = {}) : config_(config) { config_.validate(); }

    int num_classes() const noexcept { return config_.num_classes; }
    const MapperConfig &config() const noexcept { return config_; }

    std::size_t size() const noexcept { return gaussians_.size(); }
    bool empty() const noexcept { return gaussians_.empty(); }

    const Gaussian &operator[](std::size_t i) const { return gaussians_[i]; }
    std::span<const Gaussian> gaussians() const noexcept { return gaussians_; }

    /// Mutable access; bumps the revision. Re-acquire after each render.
    std::vector<Gaussian> &mutable_gaussians() {
        touch();
        return gaussians_;
    }

    void append(Gaussian g) {
        if (g.class_scores.size() != config_.num_classes) {
            throw Error("class vector length does not match the map's class count");
        }
        touch();
        gaussians_.push_back(std::move(g));
    }

    /// Removes Gaussians matching pred, keeping survivor order.
    template <typename Pred>
    std::size_t erase_if(Pred pred) {
        const auto removed = std::erase_if(gaussians_, pred);
        if (removed > 0) {
            touch();
        }
        return removed;
    }

    void clear() {
        touch();
        gaussians_.clear();
    }

    std::uint64_t revision() const noexcept { return revision_; }

    /// Compares contents (Gaussians and class count), not revision.
    bool same_contents(const GaussianMap &o) const {
        return config_.num_classes == o.config_.num_classes && gaussians_ == o.gaussians_;
    }

  private:
    void touch() { revision_ = detail::next_map_revision(); }

    MapperConfig config_;
    std::vector<Gaussian> gaussians_;
    std::uint64_t revision_ = detail::next_map_revision();
};

} // namespace splatmap
