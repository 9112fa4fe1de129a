#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "flowrec/common.hpp"

namespace flowrec {

/// Deterministic RNG wrapper. All stochastic choices in the toolkit derive
/// from one of these, seeded from the run seed plus a fixed stream id, so
/// that identical commands reproduce bitwise-identical results.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    /// Standard normal via Box-Muller (no cached spare, keeps state simple).
    double normal() {
        double u1 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    /// Independent substream: mixes the id into a fresh seed (splitmix64).
    Rng fork(std::uint64_t stream_id) const {
        std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * (stream_id + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return Rng(z ^ (z >> 31));
    }

  private:
    std::mt19937_64 eng_;
    std::uint64_t seed_ = 0;
};

}  // namespace flowrec
