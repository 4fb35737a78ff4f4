#pragma once

#include <cmath>
#include <cstdint>

namespace vat {

// Seeded pseudo-random generator used everywhere randomness is needed.
// Core generator: xoshiro256++ (Blackman/Vigna), seeded through splitmix64.
// The algorithm is fixed so that identical seeds reproduce identical
// streams on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : s_) word = splitmix64(x);
        has_spare_ = false;
    }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9E3779B97F4A7C15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Stable mixing of (a, b) into a single stream seed; used to derive
    // per-episode seeds from (task_id, episode_index).
    static uint64_t mix(uint64_t seed, uint64_t a, uint64_t b) {
        uint64_t x = seed;
        x ^= 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2);
        uint64_t h = splitmix64(x);
        x = h ^ (0xC2B2AE3D27D4EB4FULL * (b + 1));
        return splitmix64(x);
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

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t uniform_index(uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Marsaglia's polar method (sqrt/log only).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace vat
