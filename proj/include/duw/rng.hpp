#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace duw {

using Rng = std::mt19937_64;

// splitmix64 finalizer
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a root seed and a tuple of
/// coordinates, e.g. derive_seed(seed, {round, client_id}).
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix_seed(root);
  for (auto p : parts) h = mix_seed(h ^ mix_seed(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// FNV-1a, stable across platforms (std::hash is not).
inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> parts = {}) {
  return Rng(derive_seed(root, parts));
}

// Stream tags so that different consumers of one root seed never collide.
namespace stream {
inline constexpr std::uint64_t model_init = 1;
inline constexpr std::uint64_t partition = 2;
inline constexpr std::uint64_t ood = 3;
inline constexpr std::uint64_t trigger = 4;
inline constexpr std::uint64_t decoder = 5;
inline constexpr std::uint64_t sampling = 6;
inline constexpr std::uint64_t local_train = 7;
inline constexpr std::uint64_t injection = 8;
inline constexpr std::uint64_t attack = 9;
inline constexpr std::uint64_t encoder = 10;
inline constexpr std::uint64_t data = 11;
}  // namespace stream

}  // namespace duw
