// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/tracker.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace splatmap::io {

/// Parses "timestamp tx ty tz qx qy qz qw" lines (TUM layout). Comments
/// start with '#'. Entries get consecutive indices in file order.
inline Trajectory parse_tum_trajectory(std::istream &in, const std::string &name = "trajectory") {
    Trajectory out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        std::istringstream ls(line);
        double v[8];
        int n = 0;
        while (n < 8 && ls >> v[n]) {
            ++n;
        }
        if (n == 0 && ls.eof()) {
            continue;
        }
        std::string rest;
        if (n != 8 || (ls >> rest)) {
            throw Error(name + ":" + std::to_string(lineno) + ": expected 8 numbers");
        }
        const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
        if (!(q.norm() > 1e-9) || !std::isfinite(q.norm())) {
            throw Error(name + ":" + std::to_string(lineno) + ": degenerate quaternion");
        }
        PoseSE3 pose;
        // Already-unit quaternions are kept as written so that a written
        // trajectory reads back bitwise.
        pose.rotation = std::abs(q.norm() - 1.0) < 1e-12 ? q : q.normalized();
        pose.translation = Vec3(v[1], v[2], v[3]);
        out.push_back({static_cast<int>(out.size()), v[0], pose});
    }
    return out;
}

inline Trajectory read_tum_trajectory(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open trajectory: " + path.string());
    }
    return parse_tum_trajectory(in, path.string());
}

/// Lossless text (17 significant digits) so a written trajectory reads back
/// bitwise.
inline void write_tum_trajectory(const Trajectory &t, std::ostream &os) {
    char buf[512];
    for (const auto &p : t) {
        const auto &q = p.pose.rotation;
        const auto &x = p.pose.translation;
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", p.timestamp, x.x(), x.y(),
                      x.z(), q.x(), q.y(), q.z(), q.w());
        os << buf;
    }
}

inline void write_tum_trajectory(const Trajectory &t, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write trajectory: " + path.string());
    }
    write_tum_trajectory(t, out);
}

} // namespace splatmap::io
