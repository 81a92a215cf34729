#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace asnmpc {

/// Deterministic random stream. Wraps a 64-bit Mersenne twister and draws
/// normals through an explicit Box-Muller transform so that sequences are
/// reproducible independently of the standard library's distribution
/// implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    double uniform01() {
        // 53-bit mantissa in [0, 1)
        return (engine_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal() {
        // Box-Muller; the second variate is discarded so each call consumes a
        // fixed number of engine draws.
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t next_u64() { return engine_(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        int v = lo + static_cast<int>(uniform01() * (hi - lo + 1));
        return v > hi ? hi : v;
    }

    /// Derive an independent child stream. Mixing uses splitmix64 so nearby
    /// (seed, id) pairs do not produce correlated streams.
    Rng fork(std::uint64_t stream_id) const {
        std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * (stream_id + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return Rng(z ^ (z >> 31));
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace asnmpc
