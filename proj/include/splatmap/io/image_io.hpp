// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/image.hpp>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

namespace splatmap::io {

/// Fixed colors for class ids 0..19; other ids (and kUnlabeled) map to black.
inline constexpr std::array<std::array<std::uint8_t, 3>, 20> kClassPalette{{
    {174, 199, 232}, {152, 223, 138}, {31, 119, 180},  {255, 187, 120}, {188, 189, 34},
    {140, 86, 75},   {255, 152, 150}, {214, 39, 40},   {197, 176, 213}, {148, 103, 189},
    {196, 156, 148}, {23, 190, 207},  {247, 182, 210}, {219, 219, 141}, {255, 127, 14},
    {158, 218, 229}, {44, 160, 44},   {112, 128, 144}, {227, 119, 194}, {82, 84, 163},
}};

namespace detail {

inline void write_mat(const cv::Mat &m, const std::filesystem::path &path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), m)) {
        throw Error("failed to write image: " + path.string());
    }
}

inline cv::Mat read_mat(const std::filesystem::path &path, int flags) {
    cv::Mat m = cv::imread(path.string(), flags);
    if (m.empty()) {
        throw Error("failed to read image: " + path.string());
    }
    return m;
}

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

} // namespace detail

/// 8-bit RGB from a 3-channel [0, 1] image (values clamped).
inline void write_color(const ImageD &img, const std::filesystem::path &path) {
    if (img.channels() != 3) {
        throw Error("write_color: expected 3 channels");
    }
    cv::Mat m(img.height(), img.width(), CV_8UC3);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            // OpenCV stores BGR.
            m.at<cv::Vec3b>(y, x) = cv::Vec3b(detail::to_u8(img(x, y, 2)), detail::to_u8(img(x, y, 1)),
                                              detail::to_u8(img(x, y, 0)));
        }
    }
    detail::write_mat(m, path);
}

/// 8-bit gray from a 1-channel [0, 1] image such as a silhouette.
inline void write_gray(const ImageD &img, const std::filesystem::path &path) {
    if (img.channels() != 1) {
        throw Error("write_gray: expected 1 channel");
    }
    cv::Mat m(img.height(), img.width(), CV_8UC1);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            m.at<std::uint8_t>(y, x) = detail::to_u8(img(x, y));
        }
    }
    detail::write_mat(m, path);
}

/// 16-bit depth in units of 1/scale meters (millimeters by default).
/// Returns the number of pixels clamped to 65535.
inline std::size_t write_depth(const ImageD &depth, const std::filesystem::path &path, double scale = 1000.0) {
    if (depth.channels() != 1) {
        throw Error("write_depth: expected 1 channel");
    }
    cv::Mat m(depth.height(), depth.width(), CV_16UC1);
    std::size_t clamped = 0;
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            const double raw = std::round(std::max(0.0, depth(x, y)) * scale);
            if (raw > 65535.0) {
                ++clamped;
            }
            m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(std::min(raw, 65535.0));
        }
    }
    detail::write_mat(m, path);
    return clamped;
}

/// Class ids written as an 8-bit single-channel map.
inline void write_labels(const LabelImage &labels, const std::filesystem::path &path) {
    cv::Mat m(labels.height(), labels.width(), CV_8UC1);
    for (int y = 0; y < labels.height(); ++y) {
        for (int x = 0; x < labels.width(); ++x) {
            m.at<std::uint8_t>(y, x) = labels(x, y);
        }
    }
    detail::write_mat(m, path);
}

/// Class ids colorized with kClassPalette.
inline void write_semantic(const LabelImage &labels, const std::filesystem::path &path) {
    cv::Mat m(labels.height(), labels.width(), CV_8UC3);
    for (int y = 0; y < labels.height(); ++y) {
        for (int x = 0; x < labels.width(); ++x) {
            const auto l = labels(x, y);
            cv::Vec3b px(0, 0, 0);
            if (l < kClassPalette.size()) {
                px = cv::Vec3b(kClassPalette[l][2], kClassPalette[l][1], kClassPalette[l][0]);
            }
            m.at<cv::Vec3b>(y, x) = px;
        }
    }
    detail::write_mat(m, path);
}

/// RGB image in [0, 1]. Resized (area/linear) when a target size is given.
inline ImageD read_color(const std::filesystem::path &path, int width = 0, int height = 0) {
    cv::Mat m = detail::read_mat(path, cv::IMREAD_COLOR);
    if (width > 0 && height > 0 && (m.cols != width || m.rows != height)) {
        cv::Mat r;
        cv::resize(m, r, cv::Size(width, height), 0, 0, m.cols > width ? cv::INTER_AREA : cv::INTER_LINEAR);
        m = r;
    }
    ImageD img(m.cols, m.rows, 3);
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            const auto &px = m.at<cv::Vec3b>(y, x);
            img(x, y, 0) = px[2] / 255.0;
            img(x, y, 1) = px[1] / 255.0;
            img(x, y, 2) = px[0] / 255.0;
        }
    }
    return img;
}

/// 16-bit depth PNG divided by scale (raw units per meter); 0 stays invalid.
inline ImageD read_depth(const std::filesystem::path &path, double scale) {
    cv::Mat m = detail::read_mat(path, cv::IMREAD_ANYDEPTH);
    if (m.type() != CV_16UC1) {
        throw Error("depth image is not 16-bit single channel: " + path.string());
    }
    ImageD img(m.cols, m.rows, 1);
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            img(x, y) = m.at<std::uint16_t>(y, x) / scale;
        }
    }
    return img;
}

/// 8-bit class-id map, resized with nearest neighbour when a size is given.
inline LabelImage read_labels(const std::filesystem::path &path, int width = 0, int height = 0) {
    cv::Mat m = detail::read_mat(path, cv::IMREAD_UNCHANGED);
    if (m.channels() != 1) {
        throw Error("label image must have one channel: " + path.string());
    }
    if (m.depth() != CV_8U) {
        cv::Mat c;
        m.convertTo(c, CV_8U);
        m = c;
    }
    if (width > 0 && height > 0 && (m.cols != width || m.rows != height)) {
        cv::Mat r;
        cv::resize(m, r, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
        m = r;
    }
    LabelImage img(m.cols, m.rows, 1);
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            img(x, y) = m.at<std::uint8_t>(y, x);
        }
    }
    return img;
}

} // namespace splatmap::io
