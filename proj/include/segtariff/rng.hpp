#ifndef SEGTARIFF_RNG_HPP_
#define SEGTARIFF_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace segtariff {

/// SplitMix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sub-seed for stream `index` of a generator seeded with `seed`. Streams are
/// independent of evaluation order, so per-item work can be reordered freely.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept
{
  return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return derive_seed(seed, h);
}

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from raw engine bits, so sequences do not
/// depend on the standard library's distribution implementation.
inline double uniform01(Rng & rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal via Box-Muller on `uniform01`.
inline double standard_normal(Rng & rng)
{
  double u1 = uniform01(rng);
  while (u1 <= 0.0) { u1 = uniform01(rng); }
  const double u2 = uniform01(rng);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace segtariff

#endif  // SEGTARIFF_RNG_HPP_
