#pragma once
// Deterministic RNG with named substreams.
//
// Every random decision in a run flows from a single u64 seed. Components
// derive independent substreams via Rng::fork(label, index...), so adding
// or disabling one consumer never shifts the draws seen by another. The
// generator (splitmix64) and the distributions are implemented here rather
// than taken from <random> so that streams are stable across toolchains.

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace zidian {

class Rng {
public:
    Rng() : state_(0x9E3779B97F4A7C15ULL) {}
    explicit Rng(uint64_t seed) : state_(seed ^ 0x9E3779B97F4A7C15ULL) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t below(uint64_t n) {
        // Rejection-free modulo is fine here: n is tiny relative to 2^64.
        return next_u64() % n;
    }

    // Standard normal via Box-Muller. Draws two uniforms per call so the
    // stream position is input-independent.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Derives an independent substream keyed by a label and optional indices.
    Rng fork(std::string_view label, uint64_t a = 0, uint64_t b = 0) const {
        uint64_t h = 0xCBF29CE484222325ULL ^ state_;
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ULL;
        }
        h = mix(h ^ mix(a + 0x9E3779B97F4A7C15ULL));
        h = mix(h ^ mix(b + 0xD1B54A32D192ED03ULL));
        Rng r;
        r.state_ = h;
        return r;
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

}  // namespace zidian
