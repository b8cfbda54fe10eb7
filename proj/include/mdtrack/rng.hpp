#pragma once

#include <cmath>
#include <cstdint>

namespace mdtrack {

// Deterministic PRNG used everywhere seeds appear. Hand-rolled (splitmix64
// state advance, explicit bit-to-double mapping, Box-Muller normals) so that
// streams are bit-identical across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(uniform() * static_cast<double>(n));
    }

    // Standard normal via Box-Muller; two uniforms consumed per sample, no
    // cached spare, so the stream position is a pure function of call count.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        constexpr double two_pi = 6.283185307179586476925286766559;
        double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(two_pi * u2);
    }

    // Normal truncated to [-2 sigma, 2 sigma] by rejection.
    double truncated_normal(double sigma) {
        for (;;) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * sigma;
        }
    }

    // Derive an independent stream; mixing the current state with `stream`
    // keeps forks reproducible regardless of draw count on the parent.
    Rng fork(std::uint64_t stream) const {
        Rng r(state_ ^ (0xA5A5A5A5DEADBEEFull + stream * 0x9E3779B97F4A7C15ull));
        r.next_u64();
        return r;
    }

private:
    std::uint64_t state_;
};

}  // namespace mdtrack
