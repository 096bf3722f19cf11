// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

// Lossless map container:
//   "GS4S" | u32 version | u32 num_classes | u64 count | count records
// Each record: f64 color[3] mean[3] log_scale[3] rotation[4] opacity_logit
// class_scores[N], u32 update_count, i64 epoch. Everything little-endian.

#pragma once

#include <splatmap/gaussian.hpp>
#include <splatmap/io/binary.hpp>

namespace splatmap::io {

inline constexpr char kSnapshotMagic[4] = {'G', 'S', '4', 'S'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

inline void write_snapshot(const GaussianMap &map, std::ostream &os) {
    os.write(kSnapshotMagic, 4);
    detail::put_le<std::uint32_t>(os, kSnapshotVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(map.num_classes()));
    detail::put_le<std::uint64_t>(os, map.size());
    for (const auto &g : map.gaussians()) {
        for (int i = 0; i < 3; ++i) {
            detail::put_le(os, g.color[i]);
        }
        for (int i = 0; i < 3; ++i) {
            detail::put_le(os, g.mean[i]);
        }
        for (int i = 0; i < 3; ++i) {
            detail::put_le(os, g.log_scale[i]);
        }
        for (int i = 0; i < 4; ++i) {
            detail::put_le(os, g.rotation[i]);
        }
        detail::put_le(os, g.opacity_logit);
        for (Eigen::Index i = 0; i < g.class_scores.size(); ++i) {
            detail::put_le(os, g.class_scores[i]);
        }
        detail::put_le<std::uint32_t>(os, g.update_count);
        detail::put_le<std::int64_t>(os, g.epoch);
    }
}

/// The map carries the snapshot's class count; other config fields come
/// from base.
inline GaussianMap read_snapshot(std::istream &is, MapperConfig base = {}) {
    constexpr const char *what = "snapshot";
    char magic[4] = {};
    if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kSnapshotMagic)) {
        throw Error("not a snapshot");
    }
    if (detail::get_le<std::uint32_t>(is, what) != kSnapshotVersion) {
        throw Error("unsupported version");
    }
    const auto n = detail::get_le<std::uint32_t>(is, what);
    if (n < 1 || n > 255) {
        throw Error("snapshot: invalid class count");
    }
    base.num_classes = static_cast<int>(n);
    GaussianMap map(base);
    const auto count = detail::get_le<std::uint64_t>(is, what);
    for (std::uint64_t k = 0; k < count; ++k) {
        Gaussian g;
        for (int i = 0; i < 3; ++i) {
            g.color[i] = detail::get_le<double>(is, what);
        }
        for (int i = 0; i < 3; ++i) {
            g.mean[i] = detail::get_le<double>(is, what);
        }
        for (int i = 0; i < 3; ++i) {
            g.log_scale[i] = detail::get_le<double>(is, what);
        }
        for (int i = 0; i < 4; ++i) {
            g.rotation[i] = detail::get_le<double>(is, what);
        }
        g.opacity_logit = detail::get_le<double>(is, what);
        g.class_scores.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            g.class_scores[i] = detail::get_le<double>(is, what);
        }
        g.update_count = detail::get_le<std::uint32_t>(is, what);
        g.epoch = detail::get_le<std::int64_t>(is, what);
        map.append(std::move(g));
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw Error("snapshot: trailing bytes");
    }
    return map;
}

inline void save_snapshot(const GaussianMap &map, const std::filesystem::path &path) {
    detail::write_atomically(path, [&](std::ostream &os) { write_snapshot(map, os); });
}

inline GaussianMap load_snapshot(const std::filesystem::path &path, MapperConfig base = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open snapshot: " + path.string());
    }
    return read_snapshot(in, base);
}

} // namespace splatmap::io
