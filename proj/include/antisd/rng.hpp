#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <span>

namespace antisd {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for a named sub-stream. Order-stable: depends only on the labels,
/// never on how many draws other streams made.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                    std::uint64_t c = 0) {
  return mix64(mix64(mix64(seed ^ 0x5a17d15e11ULL) ^ a) ^ mix64(b + 0x1234567ULL)) ^ mix64(c);
}

inline Engine make_engine(std::uint64_t seed) { return Engine(mix64(seed)); }

/// Uniform double in [0,1) from the top 53 bits. Portable, unlike
/// std::uniform_real_distribution.
inline double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) by rejection; portable across standard libraries.
inline std::uint64_t uniform_below(Engine& rng, std::uint64_t n) {
  const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Draw an index from a probability vector (need not be exactly normalized).
template <typename Probs>
int sample_index(Engine& rng, const Probs& probs) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) total += probs(i);
  const double r = uniform01(rng) * total;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (r < acc) return static_cast<int>(i);
  }
  // Rounding left r past the last bucket; return the last nonzero entry.
  for (Eigen::Index i = probs.size() - 1; i >= 0; --i)
    if (probs(i) > 0.0) return static_cast<int>(i);
  return 0;
}

}  // namespace antisd
