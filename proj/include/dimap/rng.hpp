// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace dimap {

// splitmix64 (public domain). Every randomized path in the toolkit draws from
// this generator so outputs are bit-identical across platforms and standard
// library implementations.
inline uint64_t splitmix64_next(uint64_t & state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a 64-bit, used to derive per-tensor substreams from tensor names.
inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct rng64 {
    uint64_t state;
    bool has_spare = false;
    double spare = 0.0;

    explicit rng64(uint64_t seed) : state(seed) {}

    // substream state = seed XOR fnv1a64(stream name)
    rng64(uint64_t seed, std::string_view stream) : state(seed ^ fnv1a64(stream)) {}

    uint64_t next_u64() { return splitmix64_next(state); }

    // uniform in (0, 1]; never returns 0 so it is safe under log()
    double next_unit() {
        return double((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // standard normal via Box-Muller; both variates of a pair are consumed
    double next_normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * M_PI * u2;
        spare = r * std::sin(t);
        has_spare = true;
        return r * std::cos(t);
    }
};

// independent substream for (seed, trial index)
inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
    uint64_t s = seed;
    uint64_t a = splitmix64_next(s);
    uint64_t t = a ^ (index * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    return splitmix64_next(t);
}

// uniform direction on the unit sphere in R^dim
inline std::vector<double> unit_sphere_vector(rng64 & rng, size_t dim) {
    std::vector<double> x(dim);
    double norm2 = 0.0;
    for (size_t i = 0; i < dim; ++i) {
        x[i] = rng.next_normal();
        norm2 += x[i] * x[i];
    }
    if (norm2 == 0.0 && dim > 0) {
        x[0] = 1.0;
        return x;
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (double & v : x) {
        v *= inv;
    }
    return x;
}

} // namespace dimap
