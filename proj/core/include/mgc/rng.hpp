#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace mgc {

/// All randomness in the library flows through mt19937_64 engines derived
/// from a master seed plus a purpose tag. Derivation is stateless: the
/// stream for (seed, tag, step, slot) is reproducible without serializing
/// engine state, which is what makes checkpoint resume bit-exact.
using Rng = std::mt19937_64;

namespace rngtag {
inline constexpr std::uint64_t init = 0x01;
inline constexpr std::uint64_t augment = 0x02;
inline constexpr std::uint64_t sample = 0x03;
inline constexpr std::uint64_t shuffle = 0x04;
inline constexpr std::uint64_t synthetic = 0x05;
inline constexpr std::uint64_t gradcheck = 0x06;
}  // namespace rngtag

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x2545f4914f6cdd1dULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ p);
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
  return Rng(mix_seed({seed, tag, a, b}));
}

/// Uniform double in [lo, hi). Drawn from the top 53 bits so the result is
/// identical on every platform with the same engine stream.
inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

/// Uniform integer in [lo, hi] via rejection sampling (unbiased).
inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(rng());  // full range
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return lo + static_cast<std::int64_t>(v % span);
}

/// Standard normal via Box-Muller. Stateless: consumes two draws per call
/// and discards the second variate, so no hidden cache survives between
/// calls (matters for reproducible streams).
inline double normal(Rng& rng) {
  double u1 = uniform(rng);
  while (u1 <= 0.0) u1 = uniform(rng);
  const double u2 = uniform(rng);
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline double truncated_normal(Rng& rng, double sigma, double bound = 2.0) {
  double v = normal(rng);
  while (v < -bound || v > bound) v = normal(rng);
  return v * sigma;
}

}  // namespace mgc
