#pragma once

// Deterministic randomness. Every stream in the project is derived from an
// explicit (seed, stream, index) triple so any run can be reproduced from its
// manifest alone; nothing reads std::random_device or the clock.

#include <cstdint>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace prerank {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Named sub-streams; keeps seed derivation collision-free across modules.
enum class Stream : std::uint64_t {
    world_users = 1,
    world_items = 2,
    request = 3,
    dataset_users = 4,
    model_init = 5,
    batch_sampling = 6,
    shuffle = 7,
    train_data = 8,
    eval_data = 9,
    test = 100,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
    std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc908ULL);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream) * 0x9e3779b97f4a7c15ULL);
    return splitmix64(h ^ index * 0xbf58476d1ce4e5b9ULL);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). Rejection sampled, so unbiased.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::uniform_below: n must be > 0");
        const std::uint64_t limit =
            std::numeric_limits<std::uint64_t>::max() -
            std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Standard normal via Box-Muller; consumes exactly two draws per call.
    double normal() {
        constexpr double two_pi = 6.283185307179586476925286766559;
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace prerank
