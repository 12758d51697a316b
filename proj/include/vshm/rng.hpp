#pragma once

#include <cstdint>
#include <random>

namespace vshm {

// Stable seed derivation: every consumer of randomness owns a private engine
// seeded from (base seed, stream tag), so realizations never share state and
// results are independent of evaluation order or worker count.
inline std::uint64_t seed_mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
    return std::mt19937_64(seed_mix(seed, stream));
}

// Stream tags used by the Monte Carlo pipeline (realization i uses
// base_seed + i as its seed; see montecarlo.hpp).
namespace rng_stream {
inline constexpr std::uint64_t parameters = 0;
inline constexpr std::uint64_t noise_low = 1;
inline constexpr std::uint64_t noise_high = 2;
} // namespace rng_stream

} // namespace vshm
