#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace patchlab {

// splitmix64 finalizer; used to derive independent substream seeds from
// (root seed, purpose tag, index) tuples.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(a, b) ^ mix64(c)); }

// mt19937_64 core with hand-rolled distributions. The engine itself is fully
// specified by the standard; the distributions are written out here so that
// streams can be replayed exactly (std:: distributions differ across
// standard libraries).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform in [0, n), unbiased via rejection
    uint64_t uniform_u64(uint64_t n) {
        const uint64_t lim = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= lim);
        return v % n;
    }

    // uniform integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + int64_t(uniform_u64(uint64_t(hi - lo + 1)));
    }

    // Box-Muller, one value per call (two draws consumed)
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double log_uniform(double lo, double hi) {
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace patchlab
