#pragma once

#include <cstdint>
#include <random>

namespace handy {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(mix64(seed) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

// Independent stream for (seed, a, b); used so that results do not depend on
// evaluation order or thread count.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return std::mt19937_64(derive_seed(seed, a, b));
}

inline double uniform01(std::mt19937_64& g) {
    return std::generate_canonical<double, 53>(g);
}

}  // namespace handy
