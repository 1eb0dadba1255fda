#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cada {

// splitmix64 finalizer; good avalanche for seed derivation.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic sub-seed derivation: hash a master seed with a purpose tag
// and indices. Stateless, so call sites never depend on draw order elsewhere.
inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a = 0,
                            uint64_t b = 0) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the tag
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return mix64(mix64(mix64(master ^ h) + a) + b);
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace cada
