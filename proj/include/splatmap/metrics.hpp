// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/losses.hpp>
#include <splatmap/tracker.hpp>

#include <Eigen/Geometry>

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace splatmap {

/// Peak signal-to-noise ratio in dB for images in [0, 1]; +inf when equal.
inline double psnr(const ImageD &pred, const ImageD &gt) {
    if (!pred.same_shape(gt)) {
        throw Error("psnr: shape mismatch");
    }
    if (pred.data().empty()) {
        throw Error("psnr: empty image");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data().size(); ++i) {
        const double e = pred.data()[i] - gt.data()[i];
        sum += e * e;
    }
    const double mse = sum / static_cast<double>(pred.data().size());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(1.0 / mse);
}

inline double ssim_value(const ImageD &pred, const ImageD &gt) { return ssim(pred, gt, false).value; }

/// Mean |pred - gt| in centimeters over pixels with gt > 0 (and mask != 0).
inline double depth_l1_cm(const ImageD &pred, const ImageD &gt, const LabelImage *mask = nullptr) {
    if (!pred.same_shape(gt) || pred.channels() != 1) {
        throw Error("depth_l1_cm: shape mismatch");
    }
    if (mask != nullptr && !mask->same_shape(gt.width(), gt.height(), 1)) {
        throw Error("depth_l1_cm: mask shape mismatch");
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < gt.height(); ++y) {
        for (int x = 0; x < gt.width(); ++x) {
            if (gt(x, y) > 0.0 && (mask == nullptr || (*mask)(x, y) != 0)) {
                sum += std::abs(pred(x, y) - gt(x, y));
                ++n;
            }
        }
    }
    if (n == 0) {
        throw Error("empty mask");
    }
    return 100.0 * sum / static_cast<double>(n);
}

/// Row = ground truth class, column = predicted class. Pixels whose gt label
/// is unlabeled or out of range are ignored; out-of-range predictions count
/// against the gt class only.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(int num_classes) : n_(num_classes), m_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
        if (num_classes < 1 || num_classes > 255) {
            throw Error("confusion matrix: num_classes must be in [1, 255]");
        }
    }

    int num_classes() const noexcept { return n_; }

    void add(const LabelImage &pred, const LabelImage &gt) {
        if (!pred.same_shape(gt)) {
            throw Error("miou: shape mismatch");
        }
        for (std::size_t i = 0; i < gt.data().size(); ++i) {
            const int g = gt.data()[i];
            if (g == kUnlabeled || g >= n_) {
                continue;
            }
            const int p = pred.data()[i];
            if (p >= n_) {
                ++missed_[g];
                continue;
            }
            ++m_[static_cast<std::size_t>(g) * n_ + p];
        }
    }

    std::uint64_t at(int gt_class, int pred_class) const { return m_[static_cast<std::size_t>(gt_class) * n_ + pred_class]; }

    /// Per-class IoU; nullopt for classes absent from both gt and prediction.
    std::optional<double> iou(int c) const {
        std::uint64_t tp = at(c, c), row = missed_.count(c) ? missed_.at(c) : 0, col = 0;
        for (int j = 0; j < n_; ++j) {
            row += at(c, j);
            col += at(j, c);
        }
        const std::uint64_t uni = row + col - tp;
        if (uni == 0) {
            return std::nullopt;
        }
        return static_cast<double>(tp) / static_cast<double>(uni);
    }

    /// Mean IoU in percent over present classes; NaN when nothing is labeled.
    double miou() const {
        double sum = 0.0;
        int count = 0;
        for (int c = 0; c < n_; ++c) {
            if (const auto v = iou(c)) {
                sum += *v;
                ++count;
            }
        }
        return count == 0 ? std::numeric_limits<double>::quiet_NaN() : 100.0 * sum / count;
    }

  private:
    int n_;
    std::vector<std::uint64_t> m_;
    std::map<int, std::uint64_t> missed_;
};

inline double miou_2d(const LabelImage &pred, const LabelImage &gt, int num_classes) {
    ConfusionMatrix cm(num_classes);
    cm.add(pred, gt);
    return cm.miou();
}

/// Absolute trajectory error (RMSE of camera centers, centimeters) after
/// rigid Umeyama alignment of est onto gt.
inline double ate_rmse(const Trajectory &est, const Trajectory &gt) {
    const auto pairs = associate(est, gt);
    if (pairs.size() < 3) {
        throw Error("ate_rmse: fewer than 3 associated poses");
    }
    Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(pairs.size()));
    Eigen::Matrix3Xd dst(3, static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        src.col(static_cast<Eigen::Index>(i)) = est[pairs[i].first].pose.translation;
        dst.col(static_cast<Eigen::Index>(i)) = gt[pairs[i].second].pose.translation;
    }
    const auto rmse = [&](const Eigen::Matrix3Xd &a) {
        return std::sqrt((a - dst).colwise().squaredNorm().mean());
    };
    const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
    const Eigen::Matrix3Xd aligned = (t.topLeftCorner<3, 3>() * src).colwise() + t.topRightCorner<3, 1>();
    // Alignment is a least-squares fit, so it never loses to identity except
    // through rounding; taking the minimum keeps identical inputs at exactly 0.
    return 100.0 * std::min(rmse(aligned), rmse(src));
}

// ---- report --------------------------------------------------------------

struct FrameMetrics {
    int index = 0;
    double timestamp = 0.0;
    double psnr = 0.0;        // dB, +inf for an exact match
    double ssim = 0.0;
    double depth_l1_cm = 0.0; // NaN without valid depth
    double miou = 0.0;        // percent, NaN without labels
};

struct EvalReport {
    std::vector<FrameMetrics> frames;
    double psnr = 0.0;
    double ssim = 0.0;
    double depth_l1_cm = 0.0;
    double miou = 0.0;     // over the confusion matrix accumulated across frames
    double ate_rmse_cm = std::numeric_limits<double>::quiet_NaN();
    std::size_t gaussian_count = 0;

    static constexpr const char *kFrameHeader = "frame,timestamp,psnr_db,ssim,depth_l1_cm,miou_pct";
    static constexpr const char *kSummaryHeader = "frames,psnr_db,ssim,depth_l1_cm,miou_pct,ate_rmse_cm,gaussians";
};

namespace detail {

// Mean over finite-or-infinite values, skipping NaN. NaN when nothing is left.
inline double mean_skip_nan(const std::vector<double> &v) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double x : v) {
        if (!std::isnan(x)) {
            sum += x;
            ++n;
        }
    }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

inline std::string format_metric(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace detail

/// Fills the averaged fields from frames and the accumulated confusion matrix.
inline void summarize(EvalReport &r, const ConfusionMatrix &cm) {
    std::vector<double> p, s, d;
    for (const auto &f : r.frames) {
        p.push_back(f.psnr);
        s.push_back(f.ssim);
        d.push_back(f.depth_l1_cm);
    }
    r.psnr = detail::mean_skip_nan(p);
    r.ssim = detail::mean_skip_nan(s);
    r.depth_l1_cm = detail::mean_skip_nan(d);
    r.miou = cm.miou();
}

inline void write_frame_csv(const EvalReport &r, std::ostream &os) {
    os << EvalReport::kFrameHeader << '\n';
    for (const auto &f : r.frames) {
        os << f.index << ',' << detail::format_metric(f.timestamp) << ',' << detail::format_metric(f.psnr) << ','
           << detail::format_metric(f.ssim) << ',' << detail::format_metric(f.depth_l1_cm) << ','
           << detail::format_metric(f.miou) << '\n';
    }
}

inline void write_summary_csv(const EvalReport &r, std::ostream &os) {
    os << EvalReport::kSummaryHeader << '\n';
    os << r.frames.size() << ',' << detail::format_metric(r.psnr) << ',' << detail::format_metric(r.ssim) << ','
       << detail::format_metric(r.depth_l1_cm) << ',' << detail::format_metric(r.miou) << ','
       << detail::format_metric(r.ate_rmse_cm) << ',' << r.gaussian_count << '\n';
}

} // namespace splatmap
