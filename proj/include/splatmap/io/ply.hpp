// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/gaussian.hpp>
#include <splatmap/io/binary.hpp>

#include <cmath>
#include <sstream>
#include <vector>

namespace splatmap::io {

namespace detail {

inline constexpr const char *kPlyProperties[] = {
    "float x",       "float y",       "float z",       "uchar red",     "uchar green",   "uchar blue",
    "float opacity", "float scale_0", "float scale_1", "float scale_2", "float rot_0",   "float rot_1",
    "float rot_2",   "float rot_3",   "uchar class",
};

inline std::uint8_t color_u8(double c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

} // namespace detail

/// Binary little-endian PLY, one vertex per Gaussian. Scales are linear
/// meters, rotation is (w, x, y, z), class is the argmax of the scores.
inline void write_ply(const GaussianMap &map, std::ostream &os) {
    os << "ply\nformat binary_little_endian 1.0\nelement vertex " << map.size() << '\n';
    for (const char *p : detail::kPlyProperties) {
        os << "property " << p << '\n';
    }
    os << "end_header\n";
    for (const auto &g : map.gaussians()) {
        for (int i = 0; i < 3; ++i) {
            detail::put_le(os, static_cast<float>(g.mean[i]));
        }
        for (int i = 0; i < 3; ++i) {
            detail::put_le(os, detail::color_u8(g.color[i]));
        }
        detail::put_le(os, static_cast<float>(g.opacity()));
        for (int i = 0; i < 3; ++i) {
            detail::put_le(os, static_cast<float>(std::exp(g.log_scale[i])));
        }
        for (int i = 0; i < 4; ++i) {
            detail::put_le(os, static_cast<float>(g.rotation[i]));
        }
        detail::put_le(os, static_cast<std::uint8_t>(dominant_class(g.class_scores)));
    }
}

inline void export_ply(const GaussianMap &map, const std::filesystem::path &path) {
    detail::write_atomically(path, [&](std::ostream &os) { write_ply(map, os); });
}

/// Reads what write_ply produces. Class scores become one-hot for the stored
/// class; opacity and scale go back to logit and log space.
inline GaussianMap read_ply(std::istream &is, MapperConfig cfg = {}) {
    std::string line;
    const auto next = [&] {
        if (!std::getline(is, line)) {
            throw Error("ply: truncated header");
        }
        return line;
    };
    if (next() != "ply" || next() != "format binary_little_endian 1.0") {
        throw Error("ply: not a binary little-endian PLY");
    }
    std::istringstream el(next());
    std::string kw, name;
    std::uint64_t count = 0;
    if (!(el >> kw >> name >> count) || kw != "element" || name != "vertex") {
        throw Error("ply: expected vertex element");
    }
    for (const char *p : detail::kPlyProperties) {
        if (next() != std::string("property ") + p) {
            throw Error("ply: unexpected property layout");
        }
    }
    if (next() != "end_header") {
        throw Error("ply: expected end_header");
    }
    GaussianMap map(cfg);
    constexpr const char *what = "ply";
    for (std::uint64_t k = 0; k < count; ++k) {
        Gaussian g;
        for (int i = 0; i < 3; ++i) {
            g.mean[i] = detail::get_le<float>(is, what);
        }
        for (int i = 0; i < 3; ++i) {
            g.color[i] = detail::get_le<std::uint8_t>(is, what) / 255.0;
        }
        const double o = std::clamp(static_cast<double>(detail::get_le<float>(is, what)), 1e-12, 1.0 - 1e-12);
        g.opacity_logit = logit(o);
        for (int i = 0; i < 3; ++i) {
            g.log_scale[i] = std::log(static_cast<double>(detail::get_le<float>(is, what)));
        }
        for (int i = 0; i < 4; ++i) {
            g.rotation[i] = detail::get_le<float>(is, what);
        }
        g.rotation.normalize();
        const int cls = detail::get_le<std::uint8_t>(is, what);
        if (cls >= cfg.num_classes) {
            throw Error("ply: class id out of range");
        }
        g.class_scores = Eigen::VectorXd::Zero(cfg.num_classes);
        g.class_scores[cls] = 1.0;
        map.append(std::move(g));
    }
    return map;
}

inline GaussianMap import_ply(const std::filesystem::path &path, MapperConfig cfg = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open ply: " + path.string());
    }
    return read_ply(in, cfg);
}

} // namespace splatmap::io
