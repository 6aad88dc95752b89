#pragma once

#include <cstdint>
#include <random>

namespace habitree {

using Rng = std::mt19937_64;

// Draw helpers with a fixed bit-level protocol so that seeded runs
// reproduce across standard libraries (std distributions are
// implementation-defined).

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n), n > 0. Multiply-shift (no modulo bias
// worth caring about at these n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const unsigned __int128 wide =
      static_cast<unsigned __int128>(rng()) * static_cast<unsigned __int128>(n);
  return static_cast<std::size_t>(wide >> 64);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent sub-stream seed for (master, a, b, c).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ (b * 0x100000001B3ULL));
  return splitmix64(s ^ (c * 0xC2B2AE3D27D4EB4FULL));
}

}  // namespace habitree
