#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace amran {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent streams from (seed, tag...)
// so that sampling results do not depend on the order in which callers ask.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed) { return mix64(seed); }

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Rest... rest) {
  return derive_seed(mix64(seed ^ mix64(tag)), static_cast<std::uint64_t>(rest)...);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Uniform in the open interval (0, 1); WRS keys need u > 0.
inline double uniform_open01(Rng& rng) {
  for (;;) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u > 0.0) return u;
  }
}

// FNV-1a, 64 bit. Stable across platforms, used for config hashes and
// checkpoint/id-map checksums.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace amran
