#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lact {

// Error categories; the CLI maps them to exit codes (usage 1, data 2, numerical 3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

enum class Precision : uint8_t { f32 = 0, f64 = 1 };

inline std::string precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline Precision parse_precision(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw UsageError("precision must be f32 or f64, got \"" + s + "\"");
}

// Dense row-major shapes. The last axis is contiguous everywhere in this codebase.
using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void check_shape_positive(const Shape& s, const char* what) {
    for (int d : s)
        if (d <= 0)
            throw UsageError(std::string(what) + ": dimensions must be positive, got " + shape_str(s));
}

static_assert(std::endian::native == std::endian::little,
              "raw tensor blocks are written little-endian via memcpy");

}  // namespace lact
