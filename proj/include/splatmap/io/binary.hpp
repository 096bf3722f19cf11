// Copyright Contributors to the splatmap Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatmap/image.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <system_error>

namespace splatmap::io::detail {

template <typename T>
void put_le(std::ostream &os, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(b, b + sizeof(T));
    }
    os.write(b, sizeof(T));
}

template <typename T>
T get_le(std::istream &is, const char *what) {
    char b[sizeof(T)];
    if (!is.read(b, sizeof(T))) {
        throw Error(std::string(what) + ": truncated file");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(b, b + sizeof(T));
    }
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers never see a partial file.
template <typename Fn>
void write_atomically(const std::filesystem::path &path, Fn &&fill, bool binary = true) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + path.string());
        }
        fill(out);
        out.flush();
        if (!out) {
            throw Error("failed writing " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error("cannot move " + tmp.string() + " into place");
    }
}

} // namespace splatmap::io::detail
