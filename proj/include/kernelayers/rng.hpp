#pragma once

#include <array>
#include <cstdint>

namespace kl {

/// xoshiro256** seeded through splitmix64.
///
/// Integer and uniform draws use integer arithmetic only (no <random>
/// distributions), so a seed yields the same sequence on every platform.
/// Normal draws also go through log/sqrt/cos and are reproducible wherever
/// the math library is.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform();

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi);

    /// Uniform integer on [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal();

    /// Derives an independent stream, e.g. one per epoch or per layer.
    static Rng derive(std::uint64_t seed, std::uint64_t stream);

private:
    std::array<std::uint64_t, 4> s_{};
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

} // namespace kl
