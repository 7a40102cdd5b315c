#pragma once

#include <cstdint>
#include <random>

namespace sipmlab {

// SplitMix64 finalizer. Used to derive decorrelated per-trial generator seeds
// from a (run seed, trial index) pair, so trial batches can run on any number
// of threads and still produce identical output.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent generator for substream `index` of stream `seed`.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t s = mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
  return std::mt19937_64(s);
}

}  // namespace sipmlab
