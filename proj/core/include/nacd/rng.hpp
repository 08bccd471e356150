#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace nacd {

// Self-contained xoshiro256++ generator. We do not use <random> distributions
// because their output is implementation-defined; every draw here is
// bit-reproducible across platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        // splitmix64 seeding
        uint64_t x = seed;
        for (auto& word : s_) {
            x += 0x9e3779b97f4a7c15ULL;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            word = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform integer in [0, bound) via bitmask rejection (no modulo bias).
    uint64_t next_below(uint64_t bound) {
        if (bound <= 1) return 0;
        const uint64_t mask = mask_for(bound - 1);
        uint64_t v;
        do {
            v = next_u64() & mask;
        } while (v >= bound);
        return v;
    }

    // Uniform double in [0, 1) with 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (uses exactly two uniform draws).
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Fisher-Yates permutation of 0..n-1.
    std::vector<size_t> permutation(size_t n) {
        std::vector<size_t> p(n);
        for (size_t i = 0; i < n; ++i) p[i] = i;
        for (size_t i = n; i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    // First m entries of a random permutation, sorted ascending.
    std::vector<size_t> sample_without_replacement(size_t n, size_t m);

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    static uint64_t mask_for(uint64_t v) {
        uint64_t m = v;
        m |= m >> 1;
        m |= m >> 2;
        m |= m >> 4;
        m |= m >> 8;
        m |= m >> 16;
        m |= m >> 32;
        return m;
    }

    uint64_t s_[4];
};

inline std::vector<size_t> Rng::sample_without_replacement(size_t n, size_t m) {
    auto p = permutation(n);
    p.resize(m < n ? m : n);
    std::vector<size_t> out(p.begin(), p.end());
    for (size_t i = 1; i < out.size(); ++i) {
        size_t v = out[i];
        size_t j = i;
        while (j > 0 && out[j - 1] > v) {
            out[j] = out[j - 1];
            --j;
        }
        out[j] = v;
    }
    return out;
}

}  // namespace nacd
