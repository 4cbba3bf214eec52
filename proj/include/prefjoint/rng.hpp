#pragma once

#include <cstdint>
#include <random>

namespace prefjoint {

// splitmix64 finalizer; good avalanche, used to derive independent substream
// seeds from a 64-bit master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Fold a value into a seed; chain calls to key a seed by several coordinates.
inline std::uint64_t seed_mix(std::uint64_t seed, std::uint64_t value) {
  return splitmix64(seed ^ splitmix64(value + 0x632be59bd9b4e019ULL));
}

// Named per-layer substreams of a simulation replica.
enum class Stream : std::uint64_t {
  v = 1,    // presence GMRF
  u = 2,    // biomass GMRF
  z = 3,    // presence-absence draws
  y = 4,    // biomass-under-presence draws
  hpp = 5,  // survey locations
  ipp = 6,  // commercial locations
  obs = 7,  // fresh biomass draws at sampled sites
};

inline std::uint64_t substream(std::uint64_t master, Stream s) {
  return seed_mix(master, 0xd1b54a32d192ed03ULL * static_cast<std::uint64_t>(s));
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

}  // namespace prefjoint
