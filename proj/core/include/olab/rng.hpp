#pragma once

#include <cstdint>

namespace olab {

/// Deterministic counter-free PRNG keyed by (seed, stream).
///
/// Identical (seed, stream) pairs yield identical draw sequences on any
/// platform: the generator is a hand-rolled xoshiro256** seeded through
/// splitmix64, and normal draws use Box-Muller on top of the uniform stream
/// rather than std::normal_distribution.
class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1), 53-bit resolution.
    double uniform();
    /// Standard normal via Box-Muller (second value cached).
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n);

    /// Independent child stream; split(a) and split(b) are independent for a != b.
    Rng split(std::uint64_t child) const;

  private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t s_[4] = {};
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

} // namespace olab
