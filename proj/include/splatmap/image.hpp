// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatmap {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major interleaved image. Pixel (x, y) channel c lives at
/// ((y * width + x) * channels + c).
template <typename T>
class Image {
  public:
    using value_type = T;

    Image() = default;
    Image(int width, int height, int channels, T fill = T{})
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<std::size_t>(width) * height * channels, fill) {
        if (width < 0 || height < 0 || channels < 0) {
            throw Error("negative image dimension");
        }
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }
    std::size_t pixel_count() const noexcept {
        return static_cast<std::size_t>(width_) * height_;
    }
    bool empty() const noexcept { return data_.empty(); }

    T &operator()(int x, int y, int c = 0) noexcept { return data_[index(x, y, c)]; }
    const T &operator()(int x, int y, int c = 0) const noexcept { return data_[index(x, y, c)]; }

    T *pixel(int x, int y) noexcept { return data_.data() + index(x, y, 0); }
    const T *pixel(int x, int y) const noexcept { return data_.data() + index(x, y, 0); }

    std::vector<T> &data() noexcept { return data_; }
    const std::vector<T> &data() const noexcept { return data_; }

    bool same_shape(int width, int height, int channels) const noexcept {
        return width_ == width && height_ == height && channels_ == channels;
    }
    template <typename U>
    bool same_shape(const Image<U> &other) const noexcept {
        return same_shape(other.width(), other.height(), other.channels());
    }

    bool operator==(const Image &) const = default;

  private:
    std::size_t index(int x, int y, int c) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

using ImageD = Image<double>;
using LabelImage = Image<std::uint8_t>;

/// Label value marking a pixel without ground truth.
inline constexpr std::uint8_t kUnlabeled = 255;

} // namespace splatmap
