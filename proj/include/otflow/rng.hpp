#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace otflow {

// Counter-based deterministic RNG. The stream is a pure function of
// (seed, counter): output_i = finalize(seed + GOLDEN * (counter + 1)) with the
// splitmix64 finalizer, so identical (seed, counter) pairs give identical
// sequences on every platform and streams can be split without sharing state.
class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        std::uint64_t x = seed_ + kGolden * (++counter_);
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ull;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBull;
        x ^= x >> 31;
        return x;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller, cosine branch only; consumes exactly two
    // counter steps per draw.
    double gaussian() {
        double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased integer in [0, n) via 128-bit multiply-shift.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Independent child stream; the derivation is itself a fixed function of
    // (seed, stream_id).
    Rng derive(std::uint64_t stream_id) const {
        std::uint64_t x = (seed_ ^ 0x632BE59BD9B4E019ull) + kGolden * (stream_id + 1);
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ull;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBull;
        x ^= x >> 31;
        return Rng(x);
    }

  private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

    std::uint64_t seed_;
    std::uint64_t counter_;
};

}  // namespace otflow
