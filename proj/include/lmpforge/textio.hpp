#pragma once

#include <charconv>
#include <string>

#include "lmpforge/errors.hpp"

namespace lmpforge {

/// Shortest round-trip decimal form. All numeric file output goes through
/// to_chars so identical values serialize to identical bytes everywhere.
inline std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Fixed-precision form for human-facing tables.
inline std::string fmt_fixed(double v, int precision) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, precision);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw IngestError(context + ": bad number \"" + std::string(s) + "\"");
    return v;
}

}  // namespace lmpforge
