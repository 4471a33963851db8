#pragma once

#include <cstdint>
#include <random>

namespace synthctl {

// SplitMix64 finalizer; decorrelates (seed, stream) pairs before they seed
// a Mersenne Twister.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent generator for a named sub-stream of a master seed. Every
// random choice in the library goes through here so that results depend
// only on the seed, never on thread scheduling.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(mix_seed(mix_seed(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 1)));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) + stream);
}

}  // namespace synthctl
