#pragma once

#include <cstdint>
#include <random>

namespace volseg {

/// Portable random stream: std::mt19937_64 (bit-exact by the standard) with
/// hand-written uniform/normal transforms, since the std distributions are
/// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for (seed, a, b), e.g. (epoch, patch index).
    static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p = 0.5) { return uniform() < p; }

    /// Box–Muller; the spare value is cached.
    double normal(double mean = 0.0, double sd = 1.0);

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

}  // namespace volseg
