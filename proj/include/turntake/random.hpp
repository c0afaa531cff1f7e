#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace turntake {

// std::shuffle and std::uniform_int_distribution are implementation-defined,
// so seeded outputs would differ between standard libraries. These helpers
// only rely on the exact output sequence of std::mt19937_64.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for (seed, stream_id), e.g. one per category.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t stream_id) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(stream_id + 1)));
}

// Uniform integer in [0, bound) by rejection sampling.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % bound;
}

template <typename T>
void fisher_yates(std::span<T> items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = uniform_below(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace turntake
