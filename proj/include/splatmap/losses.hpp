// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/frame.hpp>
#include <splatmap/renderer.hpp>

#include <array>
#include <cmath>
#include <vector>

namespace splatmap {

/// Term weights. lambda_ssim_mix blends L1 and (1 - SSIM) in the
/// post-correction objective.
struct LossWeights {
    double lambda_rgb = 1.0;
    double lambda_d = 1.0;
    double lambda_sem = 0.1;
    double lambda_ssim_mix = 0.2;

    void validate() const {
        if (!(lambda_rgb >= 0.0 && lambda_d >= 0.0 && lambda_sem >= 0.0 && lambda_ssim_mix >= 0.0 &&
              lambda_ssim_mix <= 1.0)) {
            throw Error("loss weights must be non-negative (ssim mix in [0, 1])");
        }
    }
};

/// A scalar image loss and its gradient with respect to the prediction.
struct ImageLoss {
    double value = 0.0;
    ImageD grad;
};

namespace detail {

inline void require_same_shape(const ImageD &a, const ImageD &b, const char *what) {
    if (!a.same_shape(b)) {
        throw Error(std::string(what) + ": shape mismatch");
    }
}

inline bool mask_ok(const LabelImage *mask, int x, int y) { return mask == nullptr || (*mask)(x, y) != 0; }

inline void require_mask_shape(const LabelImage *mask, const ImageD &img, const char *what) {
    if (mask != nullptr && !mask->same_shape(img.width(), img.height(), 1)) {
        throw Error(std::string(what) + ": mask shape mismatch");
    }
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace detail

/// Mean squared error over valid pixel-channels.
inline ImageLoss loss_rgb_mse(const ImageD &pred, const ImageD &gt, const LabelImage *mask = nullptr) {
    detail::require_same_shape(pred, gt, "loss_rgb_mse");
    detail::require_mask_shape(mask, pred, "loss_rgb_mse");
    ImageLoss out{0.0, ImageD(pred.width(), pred.height(), pred.channels(), 0.0)};
    std::size_t count = 0;
    for (int y = 0; y < pred.height(); ++y) {
        for (int x = 0; x < pred.width(); ++x) {
            if (!detail::mask_ok(mask, x, y)) {
                continue;
            }
            for (int c = 0; c < pred.channels(); ++c) {
                const double e = pred(x, y, c) - gt(x, y, c);
                out.value += e * e;
                out.grad(x, y, c) = 2.0 * e;
                ++count;
            }
        }
    }
    if (count == 0) {
        throw Error("empty mask");
    }
    out.value /= static_cast<double>(count);
    for (double &g : out.grad.data()) {
        g /= static_cast<double>(count);
    }
    return out;
}

/// Mean absolute error over valid pixel-channels. Subgradient 0 at ties.
inline ImageLoss loss_l1(const ImageD &pred, const ImageD &gt, const LabelImage *mask = nullptr) {
    detail::require_same_shape(pred, gt, "loss_l1");
    detail::require_mask_shape(mask, pred, "loss_l1");
    ImageLoss out{0.0, ImageD(pred.width(), pred.height(), pred.channels(), 0.0)};
    std::size_t count = 0;
    for (int y = 0; y < pred.height(); ++y) {
        for (int x = 0; x < pred.width(); ++x) {
            if (!detail::mask_ok(mask, x, y)) {
                continue;
            }
            for (int c = 0; c < pred.channels(); ++c) {
                const double e = pred(x, y, c) - gt(x, y, c);
                out.value += std::abs(e);
                out.grad(x, y, c) = detail::sign(e);
                ++count;
            }
        }
    }
    if (count == 0) {
        throw Error("empty mask");
    }
    out.value /= static_cast<double>(count);
    for (double &g : out.grad.data()) {
        g /= static_cast<double>(count);
    }
    return out;
}

/// Depth L1 in meters over pixels with valid (non-zero) ground truth and,
/// when given, a non-zero mask.
inline ImageLoss loss_depth_l1(const ImageD &pred, const ImageD &gt, const LabelImage *mask = nullptr) {
    if (pred.channels() != 1) {
        throw Error("loss_depth_l1: depth must have one channel");
    }
    detail::require_same_shape(pred, gt, "loss_depth_l1");
    detail::require_mask_shape(mask, pred, "loss_depth_l1");
    LabelImage valid(gt.width(), gt.height(), 1, 0);
    for (int y = 0; y < gt.height(); ++y) {
        for (int x = 0; x < gt.width(); ++x) {
            valid(x, y) = gt(x, y) > 0.0 && detail::mask_ok(mask, x, y);
        }
    }
    return loss_l1(pred, gt, &valid);
}

/// Mean cross entropy of softmax(logits) against class ids; kUnlabeled and
/// out-of-range ids are ignored.
inline ImageLoss loss_semantic_ce(const ImageD &logits, const LabelImage &labels) {
    if (!labels.same_shape(logits.width(), logits.height(), 1)) {
        throw Error("loss_semantic_ce: shape mismatch");
    }
    const int n = logits.channels();
    ImageLoss out{0.0, ImageD(logits.width(), logits.height(), n, 0.0)};
    std::size_t count = 0;
    std::vector<double> p(n);
    for (int y = 0; y < logits.height(); ++y) {
        for (int x = 0; x < logits.width(); ++x) {
            const int label = labels(x, y);
            if (label == kUnlabeled || label >= n) {
                continue;
            }
            const double *z = logits.pixel(x, y);
            const double zmax = *std::max_element(z, z + n);
            double sum = 0.0;
            for (int c = 0; c < n; ++c) {
                p[c] = std::exp(z[c] - zmax);
                sum += p[c];
            }
            out.value += -(z[label] - zmax - std::log(sum));
            double *g = out.grad.pixel(x, y);
            for (int c = 0; c < n; ++c) {
                g[c] = p[c] / sum - (c == label ? 1.0 : 0.0);
            }
            ++count;
        }
    }
    if (count == 0) {
        throw Error("empty mask");
    }
    out.value /= static_cast<double>(count);
    for (double &g : out.grad.data()) {
        g /= static_cast<double>(count);
    }
    return out;
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

inline std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i];
    }
    for (double &v : k) {
        v /= sum;
    }
    return k;
}

// Separable "valid" Gaussian filter of a w x h plane: out is (w-10) x (h-10).
inline std::vector<double> filter_valid(const std::vector<double> &in, int w, int h) {
    static const auto k = ssim_kernel();
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) {
                s += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
            }
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) {
                s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            }
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    return out;
}

// Adjoint of filter_valid: scatters a (w-10) x (h-10) plane back to w x h.
inline std::vector<double> filter_valid_adjoint(const std::vector<double> &g, int w, int h) {
    static const auto k = ssim_kernel();
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = g[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < kSsimWindow; ++i) {
                tmp[static_cast<std::size_t>(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < kSsimWindow; ++i) {
                out[static_cast<std::size_t>(y) * w + x + i] += k[i] * v;
            }
        }
    }
    return out;
}

} // namespace detail

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, valid windows only),
/// computed per channel and averaged. grad is d(SSIM)/d(pred) when requested.
inline ImageLoss ssim(const ImageD &pred, const ImageD &gt, bool with_grad = true) {
    detail::require_same_shape(pred, gt, "ssim");
    const int w = pred.width(), h = pred.height(), nc = pred.channels();
    if (w < kSsimWindow || h < kSsimWindow) {
        throw Error("ssim: image smaller than window");
    }
    if (nc < 1) {
        throw Error("ssim: image has no channels");
    }
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    const double norm = 1.0 / (static_cast<double>(ow) * oh * nc);
    ImageLoss out{0.0, with_grad ? ImageD(w, h, nc, 0.0) : ImageD{}};
    const std::size_t np = static_cast<std::size_t>(w) * h;
    std::vector<double> x(np), y(np), xx(np), yy(np), xy(np);
    for (int c = 0; c < nc; ++c) {
        for (std::size_t i = 0; i < np; ++i) {
            x[i] = pred.data()[i * nc + c];
            y[i] = gt.data()[i * nc + c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = detail::filter_valid(x, w, h);
        const auto my = detail::filter_valid(y, w, h);
        const auto sxx = detail::filter_valid(xx, w, h);
        const auto syy = detail::filter_valid(yy, w, h);
        const auto sxy = detail::filter_valid(xy, w, h);
        const std::size_t no = mx.size();
        std::vector<double> d_mx(with_grad ? no : 0), d_sxx(with_grad ? no : 0), d_sxy(with_grad ? no : 0);
        double sum = 0.0;
        for (std::size_t i = 0; i < no; ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cxy = sxy[i] - mx[i] * my[i];
            const double a1 = 2.0 * mx[i] * my[i] + kSsimC1;
            const double a2 = 2.0 * cxy + kSsimC2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1;
            const double b2 = vx + vy + kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            sum += s;
            if (with_grad) {
                const double ds_dvx = -s / b2;
                const double ds_dcxy = 2.0 * a1 / (b1 * b2);
                const double ds_dmx = 2.0 * my[i] * a2 / (b1 * b2) - s * 2.0 * mx[i] / b1;
                d_mx[i] = norm * (ds_dmx + ds_dvx * (-2.0 * mx[i]) + ds_dcxy * (-my[i]));
                d_sxx[i] = norm * ds_dvx;
                d_sxy[i] = norm * ds_dcxy;
            }
        }
        out.value += sum * norm;
        if (with_grad) {
            const auto g_mx = detail::filter_valid_adjoint(d_mx, w, h);
            const auto g_sxx = detail::filter_valid_adjoint(d_sxx, w, h);
            const auto g_sxy = detail::filter_valid_adjoint(d_sxy, w, h);
            for (std::size_t i = 0; i < np; ++i) {
                out.grad.data()[i * nc + c] = g_mx[i] + 2.0 * x[i] * g_sxx[i] + y[i] * g_sxy[i];
            }
        }
    }
    return out;
}

/// A rendered view paired with the frame it should reproduce.
struct LossView {
    const RenderOutput &render;
    const Frame &frame;
};

/// Loss over several views, with per-view gradients ready for render_backward.
struct MultiViewLoss {
    double value = 0.0;
    std::vector<PixelGrads> grads;
};

namespace detail {

inline bool has_valid_depth(const Frame &f) {
    for (double d : f.depth.data()) {
        if (d > 0.0) {
            return true;
        }
    }
    return false;
}

inline bool has_labels(const Frame &f, int n) {
    for (auto l : f.semantic.data()) {
        if (l != kUnlabeled && l < n) {
            return true;
        }
    }
    return false;
}

inline void scale_into(ImageD &dst, const ImageD &src, double s) {
    if (dst.empty()) {
        dst = ImageD(src.width(), src.height(), src.channels(), 0.0);
    }
    for (std::size_t i = 0; i < src.data().size(); ++i) {
        dst.data()[i] += s * src.data()[i];
    }
}

} // namespace detail

/// lambda_rgb * MSE + lambda_d * depth L1 + lambda_sem * CE, averaged over
/// views. Depth and semantic terms are skipped for views with no valid depth
/// or no labels respectively.
inline MultiViewLoss loss_merge(std::span<const LossView> views, const LossWeights &w = {}) {
    w.validate();
    MultiViewLoss out;
    if (views.empty()) {
        return out;
    }
    const double inv_m = 1.0 / static_cast<double>(views.size());
    out.grads.resize(views.size());
    for (std::size_t v = 0; v < views.size(); ++v) {
        const auto &r = views[v].render;
        const auto &f = views[v].frame;
        auto &g = out.grads[v];
        if (w.lambda_rgb > 0.0) {
            const auto l = loss_rgb_mse(r.color, f.rgb);
            out.value += inv_m * w.lambda_rgb * l.value;
            detail::scale_into(g.color, l.grad, inv_m * w.lambda_rgb);
        }
        if (w.lambda_d > 0.0 && detail::has_valid_depth(f)) {
            const auto l = loss_depth_l1(r.depth, f.depth);
            out.value += inv_m * w.lambda_d * l.value;
            detail::scale_into(g.depth, l.grad, inv_m * w.lambda_d);
        }
        if (w.lambda_sem > 0.0 && detail::has_labels(f, r.semantic.channels())) {
            const auto l = loss_semantic_ce(r.semantic, f.semantic);
            out.value += inv_m * w.lambda_sem * l.value;
            detail::scale_into(g.semantic, l.grad, inv_m * w.lambda_sem);
        }
    }
    return out;
}

/// lambda_rgb * ((1 - m) L1 + m (1 - SSIM)) + lambda_d * depth L1, averaged
/// over views (m = lambda_ssim_mix). No semantic term.
inline MultiViewLoss loss_opt(std::span<const LossView> views, const LossWeights &w = {}) {
    w.validate();
    MultiViewLoss out;
    if (views.empty()) {
        return out;
    }
    const double inv_m = 1.0 / static_cast<double>(views.size());
    const double mix = w.lambda_ssim_mix;
    out.grads.resize(views.size());
    for (std::size_t v = 0; v < views.size(); ++v) {
        const auto &r = views[v].render;
        const auto &f = views[v].frame;
        auto &g = out.grads[v];
        if (w.lambda_rgb > 0.0) {
            const auto l1 = loss_l1(r.color, f.rgb);
            const auto s = ssim(r.color, f.rgb);
            out.value += inv_m * w.lambda_rgb * ((1.0 - mix) * l1.value + mix * (1.0 - s.value));
            detail::scale_into(g.color, l1.grad, inv_m * w.lambda_rgb * (1.0 - mix));
            detail::scale_into(g.color, s.grad, -inv_m * w.lambda_rgb * mix);
        }
        if (w.lambda_d > 0.0 && detail::has_valid_depth(f)) {
            const auto l = loss_depth_l1(r.depth, f.depth);
            out.value += inv_m * w.lambda_d * l.value;
            detail::scale_into(g.depth, l.grad, inv_m * w.lambda_d);
        }
    }
    return out;
}

} // namespace splatmap
