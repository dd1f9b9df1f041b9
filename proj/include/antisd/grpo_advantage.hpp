#pragma once

// Group-normalized sequence advantages and their composition with the
// per-token signal.

#include "antisd/core_math.hpp"
#include "antisd/pmi_signal.hpp"
#include "antisd/policy.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace antisd {

enum class ComposeMode { additive, multiplicative };

std::string_view to_string(ComposeMode m);
ComposeMode compose_mode_from_string(std::string_view s);

struct GroupBatch {
  int prompt_id = 0;
  std::vector<TokenSeq> rollouts;
  std::vector<double> rewards;
  std::vector<bool> truncated;
  std::vector<std::vector<TokenScore>> scores;

  int size() const { return static_cast<int>(rollouts.size()); }
  /// Throws if the parallel lists disagree or G < 2.
  void validate() const;
};

/// Population std below this is a degenerate group.
inline constexpr double kDegenerateStd = 1e-8;

/// (R_i - mean) / population std, or all zeros for a degenerate group.
template <typename Derived>
VectorX<typename Derived::Scalar> seq_advantage(const Eigen::MatrixBase<Derived>& rewards) {
  using Scalar = typename Derived::Scalar;
  if (rewards.size() < 2) throw std::invalid_argument("seq_advantage: need at least 2 rewards");
  const VectorX<Scalar> r = rewards;
  const Scalar mean = r.mean();
  const VectorX<Scalar> centered = r.array() - mean;
  const Scalar sd = std::sqrt(centered.squaredNorm() / Scalar(r.size()));
  if (sd < Scalar(kDegenerateStd)) return VectorX<Scalar>::Zero(r.size());
  return centered / sd;
}

std::vector<double> seq_advantage(const std::vector<double>& rewards);

template <typename Scalar>
Scalar compose(Scalar a_seq, Scalar delta, Scalar lambda, ComposeMode mode) {
  if (mode == ComposeMode::multiplicative) return a_seq * (Scalar(1) + lambda * delta);
  return a_seq + lambda * delta;
}

}  // namespace antisd
