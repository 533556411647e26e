#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace pctrees {

// Seeded random source. All distribution code is written out here so that a
// given seed produces the same stream on every platform and stdlib.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1.
    int64_t uniform_int(int64_t n) {
        // Rejection-free multiply-shift; bias is negligible for n << 2^64.
        return static_cast<int64_t>(static_cast<uint64_t>(
            static_cast<__uint128_t>(gen_()) * static_cast<__uint128_t>(n) >> 64));
    }

    // Standard normal via Box-Muller (cosine branch only, no cached state).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    template <typename V>
    void shuffle(V& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[i], v[j]);
        }
    }

    // Derive an independent stream seed, e.g. per dataset item or per epoch.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        uint64_t z = seed ^ (stream + 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace pctrees
