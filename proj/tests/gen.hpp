#pragma once

// Hand-rolled generators for the property tests. Each property draws its
// cases from a fixed-seed stream so failures replay.

#include "antisd/core_math.hpp"
#include "antisd/policy.hpp"
#include "antisd/rng.hpp"

#include <vector>

namespace gen {

using antisd::Engine;
using antisd::Token;
using antisd::TokenSeq;

inline Engine stream(std::uint64_t tag) { return antisd::make_engine(antisd::stream_seed(0x7e57, tag)); }

inline double real(Engine& rng, double lo, double hi) { return lo + (hi - lo) * antisd::uniform01(rng); }

inline int integer(Engine& rng, int lo, int hi) {
  return lo + static_cast<int>(antisd::uniform_below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

inline TokenSeq tokens(Engine& rng, int vocab, int lo_len, int hi_len) {
  TokenSeq s(static_cast<std::size_t>(integer(rng, lo_len, hi_len)));
  for (auto& t : s) t = integer(rng, 0, vocab - 1);
  return s;
}

inline antisd::Vector logits(Engine& rng, int n, double scale) {
  antisd::Vector z(n);
  for (auto& v : z) v = real(rng, -scale, scale);
  return z;
}

inline antisd::Categorical categorical(Engine& rng, int n, double scale = 3.0) {
  return antisd::Categorical::from_logits(logits(rng, n, scale));
}

inline void randomize(antisd::Policy& p, Engine& rng, double scale = 2.0) {
  p.set_flat(logits(rng, static_cast<int>(p.parameter_count()), scale));
}

/// Rewards in {0,1}, occasionally fractional.
inline std::vector<double> rewards(Engine& rng, int g) {
  std::vector<double> r(static_cast<std::size_t>(g));
  for (auto& x : r) x = integer(rng, 0, 5) == 0 ? real(rng, 0, 1) : integer(rng, 0, 1);
  return r;
}

}  // namespace gen
