#pragma once

// Counter-based stream derivation. Every random stream in the simulator is
// keyed by a tuple such as (seed, round, client, epoch) so results never
// depend on scheduling order or worker count.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedzmg {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) noexcept {
    std::uint64_t h = 0x6a09e667f3bcc908ULL;
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

inline Rng make_stream(std::initializer_list<std::uint64_t> parts) {
    return Rng(stream_key(parts));
}

// Domain tags keep streams for different purposes disjoint.
namespace stream_tag {
inline constexpr std::uint64_t kInit = 0x11;
inline constexpr std::uint64_t kCohort = 0x22;
inline constexpr std::uint64_t kShuffle = 0x33;
inline constexpr std::uint64_t kData = 0x44;
inline constexpr std::uint64_t kEval = 0x55;
inline constexpr std::uint64_t kTheory = 0x66;
inline constexpr std::uint64_t kMonteCarlo = 0x77;
}  // namespace stream_tag

}  // namespace fedzmg
