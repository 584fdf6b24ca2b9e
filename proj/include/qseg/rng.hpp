#pragma once

/// Self-contained, portable PRNG used everywhere randomness is needed, so
/// that identical seeds give identical results on every platform and
/// standard-library implementation.  splitmix64 seeds xoshiro256**; both
/// follow the published reference algorithms and are pinned by their public
/// test vectors in the test suite.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace qseg {

struct SplitMix64 {
    std::uint64_t x;

    explicit SplitMix64(std::uint64_t seed) : x(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
};

class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& w : s_) w = sm.next();
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    bool bit() { return (next_u64() >> 63) != 0; }

    /// Standard normal via Box-Muller; generates pairs, second value cached.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1], log is finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Weibull(lambda, k) via inverse CDF.
    double weibull(double lambda, double k) {
        const double u = uniform();
        return lambda * std::pow(-std::log(1.0 - u), 1.0 / k);
    }

  private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Independent, reproducible stream k of a master seed.  Streams for
/// different k are uncorrelated, so per-sample anneals can run in any order
/// (or in parallel) and still reproduce the sequential result.
inline Rng rng_stream(std::uint64_t seed, std::uint64_t k) {
    const std::uint64_t salt = SplitMix64(k).next();
    return Rng(SplitMix64(seed ^ salt).next());
}

} // namespace qseg
