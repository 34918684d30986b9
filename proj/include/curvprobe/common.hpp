#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace curvprobe {

// Base error for everything the toolkit throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape incompatibilities; message names the primitive and both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Bad argument values (out-of-range confidence, empty inputs, ...).
class ValueError : public Error {
public:
    using Error::Error;
};

// Dataset / checkpoint ingestion failures.
class DataError : public Error {
public:
    using Error::Error;
};

// Training loss went non-finite.
class TrainingDiverged : public Error {
public:
    using Error::Error;
};

inline float clip01(float v) {
    if (v < 0.0f) return 0.0f;
    if (v > 1.0f) return 1.0f;
    return v;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. We own the generator and the distributions so results
// are bit-identical across standard libraries and platforms.
// xoshiro256** seeded through splitmix64.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9e3779b97f4a7c15ULL;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            s = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t below(uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const uint64_t threshold = (~n + 1) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller. Deterministic, no cached spare.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    float normal_f() { return float(normal()); }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t state_[4];
};

// Derives an independent stream for (seed, sample id, purpose tag) so
// per-sample fan-out stays deterministic regardless of thread schedule.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    auto mix = [&h](uint64_t v) {
        h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h *= 0xff51afd7ed558ccdULL;
        h ^= h >> 33;
    };
    mix(a);
    mix(b);
    return h;
}

// ---------------------------------------------------------------------------
// Per-sample fan-out. Each index runs exactly once; with jobs > 1 the indices
// are striped across worker threads. Work items must be independent and
// read-only over shared state (the model). Exceptions propagate.
// ---------------------------------------------------------------------------

void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn);

}  // namespace curvprobe
