#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <string>

#include "lact/common.hpp"

namespace lact {

inline uint64_t splitmix64_next(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic per-subsystem seed derivation: one root seed fans out into
// independent streams keyed by a tag ("model-init", "noise", ...) and an index.
inline uint64_t derive_seed(uint64_t root, const std::string& tag, uint64_t index = 0) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) h = (h ^ c) * 0x100000001b3ULL;
    uint64_t s = root ^ h;
    s ^= splitmix64_next(s);
    s ^= index * 0x9e3779b97f4a7c15ULL;
    return splitmix64_next(s);
}

// xoshiro256** with splitmix64 seeding. The standard <random> engines and
// distributions are implementation-defined, which would break cross-build
// reproducibility of generated datasets and training runs; this generator and
// the samplers below are pinned down to the bit.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t s = seed;
        for (auto& w : state_) w = splitmix64_next(s);
    }

    uint64_t next_u64() {
        uint64_t* s = state_.data();
        const uint64_t result = rotl(s[1] * 5, 7) * 9;
        const uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection keeps the draw unbiased.
    int64_t uniform_int(int64_t n) {
        if (n <= 0) throw UsageError("uniform_int: bound must be positive, got " + std::to_string(n));
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return static_cast<int64_t>(r % un);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller. No cached spare: the state alone fully determines the stream,
    // which keeps serialized resume points exact.
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = std::distance(first, last);
        for (auto i = n - 1; i > 0; --i) {
            const auto j = uniform_int(i + 1);
            std::swap(first[i], first[j]);
        }
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
};

}  // namespace lact
