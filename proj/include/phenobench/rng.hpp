#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace phenobench::rng {

// std::mt19937_64 has a standard-specified output sequence, so seeding it
// directly gives identical streams on every platform. The distributions in
// <random> do not share that guarantee, which is why the samplers below are
// spelled out by hand.
using engine = std::mt19937_64;

inline engine make_engine(std::uint64_t seed) { return engine{seed}; }

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(engine& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Uniform double in (0, 1], safe as a log() argument.
inline double uniform01_open_low(engine& g) {
  return (static_cast<double>(g() >> 11) + 1.0) * 0x1.0p-53;
}

// Standard normal via Box-Muller. Uses only the cosine branch so the
// sampler stays stateless; one uniform pair per variate.
inline double standard_normal(engine& g) {
  const double u1 = uniform01_open_low(g);
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Unbiased integer in [0, n) by rejection.
inline std::uint64_t bounded(engine& g, std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = g();
  } while (r >= limit);
  return r % n;
}

// Fisher-Yates permutation of {0, ..., n-1}.
inline std::vector<std::size_t> permutation(engine& g, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(bounded(g, i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace phenobench::rng
