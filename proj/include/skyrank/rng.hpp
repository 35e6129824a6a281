// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace skyrank {

using Rng = std::mt19937_64;

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a tag path, so
// that tensors / samples / prompts each get their own reproducible stream
// regardless of evaluation order.
inline std::uint64_t mix_seed(std::uint64_t seed) { return splitmix64(seed); }

template <class... Tags>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
  return mix_seed(splitmix64(seed ^ splitmix64(tag + 0x6a09e667f3bcc909ULL)), rest...);
}

template <class... Tags>
Rng make_rng(std::uint64_t seed, Tags... tags) {
  return Rng(mix_seed(seed, static_cast<std::uint64_t>(tags)...));
}

}  // namespace skyrank
