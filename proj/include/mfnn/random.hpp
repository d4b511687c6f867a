#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mfnn {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a sub-seed from a root seed and a path of stream identifiers.
/// Parallel tasks each get their own path so results do not depend on
/// scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t s = splitmix64(seed);
    for (const auto id : path) {
        s = splitmix64(s ^ splitmix64(id + 0x632be59bd9b4e019ULL));
    }
    return s;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
    return Rng(derive_seed(seed, path));
}

// Stream tags. Kept in one place so that two subsystems never share a stream.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t train_batch = 2;
inline constexpr std::uint64_t heldout = 3;
inline constexpr std::uint64_t test_eval = 4;
inline constexpr std::uint64_t reference = 5;
inline constexpr std::uint64_t pool = 6;
inline constexpr std::uint64_t pde_batch = 7;
inline constexpr std::uint64_t pde_eval = 8;
inline constexpr std::uint64_t residual = 9;
} // namespace stream

} // namespace mfnn
