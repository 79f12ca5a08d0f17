#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rotocal {

/// Seeded generator with explicit bit-level derivations so that every
/// sampled stream is bit-identical across platforms and compilers
/// (std::uniform_*_distribution is implementation-defined; we avoid it).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_bits() { return engine_(); }

    /// Uniform double in the open interval (0, 1).
    double uniform_open() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform double in (-1, 1).
    double uniform_symmetric() { return 2.0 * uniform_open() - 1.0; }

    /// ±1 with equal probability.
    double sign() { return (engine_() >> 63) ? 1.0 : -1.0; }

    /// Standard normal draw (Box–Muller, two fresh uniforms per call).
    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform_open();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    /// Uniform integer in [0, bound) via rejection, no modulo bias.
    std::uint64_t uniform_index(std::uint64_t bound) {
        const std::uint64_t limit = bound * (UINT64_MAX / bound);
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % bound;
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace rotocal
