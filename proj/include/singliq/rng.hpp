#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace singliq {

/// Counter-based random streams.
///
/// Philox-2x64-10: a keyed bijection of a 128-bit counter. Every draw is a pure
/// function of (seed, path, step), so per-path streams are identical no matter
/// how work is scheduled across threads, and common-random-number experiments
/// (same seed, bumped initial condition) are exact.
class Philox2x64 {
public:
    struct Block {
        std::uint64_t a, b;
    };

    static Block generate(std::uint64_t key, std::uint64_t c0, std::uint64_t c1) {
        std::uint64_t k = key;
        for (int round = 0; round < 10; ++round) {
            const auto prod = mulhilo(kMultiplier, c0);
            c0 = prod.first ^ k ^ c1;
            c1 = prod.second;
            k += kWeyl;
        }
        return {c0, c1};
    }

private:
    static constexpr std::uint64_t kMultiplier = 0xD2B74407B1CE6E93ULL;
    static constexpr std::uint64_t kWeyl = 0x9E3779B97F4A7C15ULL;

    static std::pair<std::uint64_t, std::uint64_t> mulhilo(std::uint64_t a, std::uint64_t b) {
        const unsigned __int128 wide = static_cast<unsigned __int128>(a) * b;
        return {static_cast<std::uint64_t>(wide >> 64), static_cast<std::uint64_t>(wide)};
    }
};

/// Map a 64-bit word to the open interval (0,1); 53-bit resolution, never 0 or 1.
inline double uniform_open(std::uint64_t word) {
    return static_cast<double>(word >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

/// Standard normal draw addressed by (seed, stream, step). Box-Muller on one
/// Philox block; deterministic and order-independent.
inline double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t step) {
    const auto block = Philox2x64::generate(seed, stream, step);
    const double u1 = uniform_open(block.a);
    const double u2 = uniform_open(block.b);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

} // namespace singliq
