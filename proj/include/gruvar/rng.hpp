#pragma once

#include <cstdint>
#include <random>

namespace gruvar {

// mt19937_64 with hand-rolled distributions. The standard distribution
// classes are implementation-defined, so seeded runs would not reproduce
// across standard libraries; these draws depend only on the engine output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [0, bound), unbiased via rejection.
    std::uint64_t uniform_index(std::uint64_t bound);

    // Standard normal via Box-Muller (pairs cached).
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64 step; used to derive independent stream seeds from
// (master seed, epoch, sample index) style tuples.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace gruvar
