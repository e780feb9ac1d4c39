#pragma once

#include <cstdint>
#include <random>

#include "robtrack/types.hpp"

namespace robtrack {

/// SplitMix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent stream seed for (seed, stream). Used for per-chunk sampling
/// engines and for the named sub-streams of an experiment (fit, evaluation, ...).
constexpr Seed derive_seed(Seed seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

inline std::mt19937_64 make_engine(Seed seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(derive_seed(seed, stream)),
                      static_cast<std::uint32_t>(derive_seed(seed, stream) >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace robtrack
