#pragma once

// Portable random streams. The standard engines have fully specified output
// sequences but the standard distributions do not, so every draw that has to
// be reproducible across toolchains goes through the helpers below.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace vizrisk::rng {

using engine = std::mt19937_64;

/// SplitMix64 finalizer (Steele, Lea & Flood constants).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed for stream `stream`, attempt `attempt`, under `master`:
///   mix64(master ^ mix64(stream ^ mix64(attempt ^ 0xA5A5A5A5A5A5A5A5)))
/// Stateless, so run r can be regenerated without replaying runs 0..r-1.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t attempt = 0) noexcept {
    return mix64(master ^ mix64(stream ^ mix64(attempt ^ 0xA5A5A5A5A5A5A5A5ULL)));
}

/// Uniform integer in [0, n) by rejection; n > 0.
inline std::uint64_t uniform_below(engine& eng, std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    std::uint64_t r = eng();
    while (r < threshold) r = eng();
    return r % n;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller (one value per call, the sine branch is
/// discarded so the stream position is a fixed function of the call count).
inline double normal(engine& eng) {
    const double u1 = 1.0 - uniform01(eng);  // (0, 1]
    const double u2 = uniform01(eng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Gamma(shape, 1) by Marsaglia & Tsang; shape > 0.
inline double gamma(engine& eng, double shape) {
    if (shape < 1.0) {
        const double u = 1.0 - uniform01(eng);
        return gamma(eng, shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = normal(eng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = 1.0 - uniform01(eng);
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
}

}  // namespace vizrisk::rng
