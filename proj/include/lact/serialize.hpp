#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "lact/common.hpp"

// Little-endian primitives shared by the volume, checkpoint, and train-state
// formats. Multi-byte integers are composed explicitly; bulk float arrays are
// memcpy'd (the build asserts a little-endian host).

namespace lact::io {

inline void write_raw(std::ostream& os, const void* data, size_t n) {
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!os) throw DataError("write failed (disk full or stream closed?)");
}

inline void read_raw(std::istream& is, void* data, size_t n, const char* what) {
    is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw DataError(std::string("truncated ") + what);
}

inline void write_u8(std::ostream& os, uint8_t v) { write_raw(os, &v, 1); }

inline void write_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    write_raw(os, b, 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    write_raw(os, b, 8);
}

inline void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline uint8_t read_u8(std::istream& is, const char* what) {
    uint8_t v;
    read_raw(is, &v, 1, what);
    return v;
}

inline uint32_t read_u32(std::istream& is, const char* what) {
    uint8_t b[4];
    read_raw(is, b, 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t read_u64(std::istream& is, const char* what) {
    uint8_t b[8];
    read_raw(is, b, 8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double read_f64(std::istream& is, const char* what) {
    const uint64_t bits = read_u64(is, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    write_raw(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, const char* what,
                               uint32_t max_len = 1u << 24) {
    const uint32_t n = read_u32(is, what);
    if (n > max_len)
        throw DataError(std::string(what) + ": embedded string length " + std::to_string(n) +
                        " is implausibly large");
    std::string s(n, '\0');
    read_raw(is, s.data(), n, what);
    return s;
}

template <typename T>
void write_array(std::ostream& os, const std::vector<T>& v) {
    write_raw(os, v.data(), v.size() * sizeof(T));
}

template <typename T>
void read_array(std::istream& is, std::vector<T>& v, const char* what) {
    read_raw(is, v.data(), v.size() * sizeof(T), what);
}

// Render a 4-byte magic for error messages, escaping non-printable bytes.
inline std::string printable_magic(const char m[4]) {
    std::string out;
    for (int i = 0; i < 4; ++i) {
        const unsigned char c = static_cast<unsigned char>(m[i]);
        if (c >= 0x20 && c < 0x7f) {
            out += static_cast<char>(c);
        } else {
            static const char* hex = "0123456789abcdef";
            out += "\\x";
            out += hex[c >> 4];
            out += hex[c & 0xf];
        }
    }
    return out;
}

inline void expect_magic(std::istream& is, const char expected[4], const char* what) {
    char m[4];
    read_raw(is, m, 4, what);
    if (std::memcmp(m, expected, 4) != 0)
        throw DataError(std::string("bad ") + what + " magic: expected \"" +
                        std::string(expected, 4) + "\", found \"" + printable_magic(m) + "\"");
}

}  // namespace lact::io
