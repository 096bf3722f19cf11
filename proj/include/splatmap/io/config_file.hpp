// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

// Flat key=value configuration. Keys are the MapperConfig and TrackerConfig
// field names; '#' starts a comment; unknown keys are errors.

#pragma once

#include <splatmap/config.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

namespace splatmap::io {

struct RunConfig {
    MapperConfig mapper;
    TrackerConfig tracker;

    void validate() const {
        mapper.validate();
        tracker.validate();
    }

    bool operator==(const RunConfig &) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(std::string_view text, const std::string &where) {
    T v{};
    const auto *end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw Error(where + ": invalid number '" + std::string(text) + "'");
    }
    return v;
}

using Setter = std::function<void(RunConfig &, std::string_view, const std::string &)>;

template <typename T, typename Field>
Setter number_setter(Field field) {
    return [field](RunConfig &c, std::string_view v, const std::string &where) { field(c) = parse_number<T>(v, where); };
}

inline const std::map<std::string, Setter, std::less<>> &config_setters() {
    static const std::map<std::string, Setter, std::less<>> setters{
        {"num_classes", number_setter<int>([](RunConfig &c) -> int & { return c.mapper.num_classes; })},
        {"stride", number_setter<int>([](RunConfig &c) -> int & { return c.mapper.stride; })},
        {"silhouette_threshold",
         number_setter<double>([](RunConfig &c) -> double & { return c.mapper.silhouette_threshold; })},
        {"prune_opacity", number_setter<double>([](RunConfig &c) -> double & { return c.mapper.prune_opacity; })},
        {"max_updates", number_setter<int>([](RunConfig &c) -> int & { return c.mapper.max_updates; })},
        {"refine_step", number_setter<double>([](RunConfig &c) -> double & { return c.mapper.refine_step; })},
        {"refine_color_ratio",
         number_setter<double>([](RunConfig &c) -> double & { return c.mapper.refine_color_ratio; })},
        {"optimize_step", number_setter<double>([](RunConfig &c) -> double & { return c.mapper.optimize_step; })},
        {"topk_frames", number_setter<int>([](RunConfig &c) -> int & { return c.mapper.topk_frames; })},
        {"pose_corr_trans_thresh",
         number_setter<double>([](RunConfig &c) -> double & { return c.mapper.pose_corr_trans_thresh; })},
        {"pose_corr_rot_thresh",
         number_setter<double>([](RunConfig &c) -> double & { return c.mapper.pose_corr_rot_thresh; })},
        {"mode",
         [](RunConfig &c, std::string_view v, const std::string &where) {
             if (v == "gt" || v == "ground_truth") {
                 c.tracker.mode = TrackerMode::ground_truth;
             } else if (v == "icp") {
                 c.tracker.mode = TrackerMode::icp;
             } else {
                 throw Error(where + ": mode must be gt or icp");
             }
         }},
        {"keyframe_flow_thresh",
         number_setter<double>([](RunConfig &c) -> double & { return c.tracker.keyframe_flow_thresh; })},
        {"icp_iters", number_setter<int>([](RunConfig &c) -> int & { return c.tracker.icp_iters; })},
        {"icp_max_corr_dist",
         number_setter<double>([](RunConfig &c) -> double & { return c.tracker.icp_max_corr_dist; })},
        {"loop_flow_thresh", number_setter<double>([](RunConfig &c) -> double & { return c.tracker.loop_flow_thresh; })},
        {"loop_min_separation",
         number_setter<int>([](RunConfig &c) -> int & { return c.tracker.loop_min_separation; })},
    };
    return setters;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// Applies key=value lines on top of base. `name` labels error messages.
inline RunConfig parse_config(std::istream &in, const std::string &name = "config", RunConfig base = {}) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view s = line;
        if (const auto hash = s.find('#'); hash != std::string_view::npos) {
            s = s.substr(0, hash);
        }
        s = detail::trim(s);
        if (s.empty()) {
            continue;
        }
        const std::string where = name + ":" + std::to_string(lineno);
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) {
            throw Error(where + ": expected key=value");
        }
        const auto key = detail::trim(s.substr(0, eq));
        const auto value = detail::trim(s.substr(eq + 1));
        const auto &setters = detail::config_setters();
        const auto it = setters.find(key);
        if (it == setters.end()) {
            throw Error(where + ": unknown key '" + std::string(key) + "'");
        }
        it->second(base, value, where);
    }
    base.validate();
    return base;
}

inline RunConfig load_config(const std::filesystem::path &path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open config file: " + path.string());
    }
    return parse_config(in, path.string(), base);
}

/// Canonical text form; parse_config(to_text(c)) == c.
inline std::string to_text(const RunConfig &c) {
    std::ostringstream os;
    const auto &m = c.mapper;
    const auto &t = c.tracker;
    os << "num_classes=" << m.num_classes << '\n'
       << "stride=" << m.stride << '\n'
       << "silhouette_threshold=" << detail::format_double(m.silhouette_threshold) << '\n'
       << "prune_opacity=" << detail::format_double(m.prune_opacity) << '\n'
       << "max_updates=" << m.max_updates << '\n'
       << "refine_step=" << detail::format_double(m.refine_step) << '\n'
       << "refine_color_ratio=" << detail::format_double(m.refine_color_ratio) << '\n'
       << "optimize_step=" << detail::format_double(m.optimize_step) << '\n'
       << "topk_frames=" << m.topk_frames << '\n'
       << "pose_corr_trans_thresh=" << detail::format_double(m.pose_corr_trans_thresh) << '\n'
       << "pose_corr_rot_thresh=" << detail::format_double(m.pose_corr_rot_thresh) << '\n'
       << "mode=" << (t.mode == TrackerMode::icp ? "icp" : "gt") << '\n'
       << "keyframe_flow_thresh=" << detail::format_double(t.keyframe_flow_thresh) << '\n'
       << "icp_iters=" << t.icp_iters << '\n'
       << "icp_max_corr_dist=" << detail::format_double(t.icp_max_corr_dist) << '\n'
       << "loop_flow_thresh=" << detail::format_double(t.loop_flow_thresh) << '\n'
       << "loop_min_separation=" << t.loop_min_separation << '\n';
    return os.str();
}

} // namespace splatmap::io
