#pragma once

// A small log-linear autoregressive policy with exact score gradients.
//
//   logits(v | ctx) = window[last k tokens of ctx, v]
//                   + sum_{c in shared(ctx)} shared[c, v]
//                   + sum_{c in side(ctx)}   side[c, v]
//
// side(ctx) is the set of tokens inside a bracketed segment [open, close) of
// the context; shared(ctx) is the set of tokens outside it that belong to the
// configured shared-feature set. A student context never holds the open
// marker, so only the teacher's enriched context reaches the side rows.

#include "antisd/core_math.hpp"
#include "antisd/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace antisd {

using Token = int;
using TokenSeq = std::vector<Token>;

/// Token used to left-pad contexts shorter than the window.
inline constexpr Token kPadToken = 0;
inline constexpr Token kNoToken = -1;

/// Exact gradient of log pi(token | ctx) with respect to the parameters.
/// Every active row receives the same coefficient vector (onehot - probs).
struct ScoreGradient {
  Eigen::Index window_row = 0;
  std::uint64_t shared_mask = 0;
  std::uint64_t side_mask = 0;
  Vector coeff;
};

struct FeatureMasks {
  std::uint64_t shared = 0;
  std::uint64_t side = 0;
};

class Policy {
 public:
  Policy() = default;
  /// shared_tokens: bit c set gives token c a shared row (0 disables the table).
  /// side_open == kNoToken disables the side table.
  Policy(int vocab_size, int context_order, std::uint64_t shared_tokens = 0,
         Token side_open = kNoToken, Token side_close = kNoToken);

  int vocab_size() const { return vocab_size_; }
  int context_order() const { return context_order_; }
  Token side_open() const { return side_open_; }
  Token side_close() const { return side_close_; }
  bool has_side() const { return side_open_ != kNoToken; }
  std::uint64_t shared_tokens() const { return shared_tokens_; }
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  Matrix& window_table() { return window_; }
  const Matrix& window_table() const { return window_; }
  Matrix& shared_table() { return shared_; }
  const Matrix& shared_table() const { return shared_; }
  Matrix& side_table() { return side_; }
  const Matrix& side_table() const { return side_; }

  Eigen::Index parameter_count() const { return window_.size() + shared_.size() + side_.size(); }

  /// Throws std::out_of_range naming the offending position.
  void check_tokens(std::span<const Token> context) const;

  Eigen::Index window_row(std::span<const Token> context) const;
  FeatureMasks feature_masks(std::span<const Token> context) const;

  Vector logits(std::span<const Token> context) const;
  Vector logits(Eigen::Index window_row, const FeatureMasks& masks) const;

  Categorical next_dist(std::span<const Token> context) const;
  ScoreGradient grad_log_prob(std::span<const Token> context, Token token) const;

  /// params += scale * gradient
  void apply(const ScoreGradient& g, double scale);

  /// Samples until EOS or max_len tokens. Returns {rollout, truncated}.
  std::pair<TokenSeq, bool> sample_rollout(std::span<const Token> prompt, int max_len,
                                           Token eos, Engine& rng) const;

  /// Flat parameter view (window, shared, side rows in order), for checks.
  Vector flat() const;
  void set_flat(const Vector& flat);
  /// flat += scale * g, in the layout of flat().
  void accumulate(Vector& flat, const ScoreGradient& g, double scale) const;

  bool operator==(const Policy& other) const;

 private:
  int vocab_size_ = 0;
  int context_order_ = 0;
  Token side_open_ = kNoToken;
  Token side_close_ = kNoToken;
  std::uint64_t shared_tokens_ = 0;
  std::int64_t step_ = 0;
  Matrix window_;
  Matrix shared_;
  Matrix side_;
};

}  // namespace antisd
