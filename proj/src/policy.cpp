#include "antisd/policy.hpp"

#include <stdexcept>
#include <string>

namespace antisd {

namespace {

void add_rows(Vector& z, const Matrix& table, std::uint64_t mask) {
  for (int c = 0; mask != 0; ++c, mask >>= 1)
    if (mask & 1u) z += table.row(c).transpose();
}

void bump_rows(Matrix& table, std::uint64_t mask, const Vector& delta) {
  for (int c = 0; mask != 0; ++c, mask >>= 1)
    if (mask & 1u) table.row(c) += delta.transpose();
}

}  // namespace

Policy::Policy(int vocab_size, int context_order, std::uint64_t shared_tokens, Token side_open,
               Token side_close)
    : vocab_size_(vocab_size),
      context_order_(context_order),
      side_open_(side_open),
      side_close_(side_close),
      shared_tokens_(shared_tokens) {
  if (vocab_size < 2 || vocab_size > 64)
    throw std::invalid_argument("Policy: vocab_size must be in [2, 64]");
  if (context_order < 1 || context_order > 4)
    throw std::invalid_argument("Policy: context_order must be in [1, 4]");
  if (side_open != kNoToken && (side_open < 0 || side_open >= vocab_size || side_close < 0 ||
                                side_close >= vocab_size || side_close == side_open))
    throw std::invalid_argument("Policy: side markers must be two distinct token ids");
  if (vocab_size < 64) shared_tokens_ &= (std::uint64_t{1} << vocab_size) - 1;
  Eigen::Index rows = 1;
  for (int i = 0; i < context_order; ++i) rows *= vocab_size;
  window_ = Matrix::Zero(rows, vocab_size);
  shared_ = shared_tokens_ ? Matrix::Zero(vocab_size, vocab_size) : Matrix(0, vocab_size);
  side_ = has_side() ? Matrix::Zero(vocab_size, vocab_size) : Matrix(0, vocab_size);
}

void Policy::check_tokens(std::span<const Token> context) const {
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (context[i] < 0 || context[i] >= vocab_size_)
      throw std::out_of_range("unknown token id " + std::to_string(context[i]) +
                              " at context position " + std::to_string(i));
  }
}

Eigen::Index Policy::window_row(std::span<const Token> context) const {
  Eigen::Index row = 0;
  const auto n = static_cast<std::ptrdiff_t>(context.size());
  for (std::ptrdiff_t i = n - context_order_; i < n; ++i) {
    const Token t = i >= 0 ? context[static_cast<std::size_t>(i)] : kPadToken;
    row = row * vocab_size_ + t;
  }
  return row;
}

FeatureMasks Policy::feature_masks(std::span<const Token> context) const {
  FeatureMasks m;
  bool inside = false;
  for (Token t : context) {
    if (has_side() && t == side_open_) {
      inside = true;
    } else if (has_side() && t == side_close_) {
      inside = false;
    } else {
      const std::uint64_t bit = std::uint64_t{1} << t;
      if (inside)
        m.side |= bit;
      else
        m.shared |= bit;
    }
  }
  m.shared &= shared_tokens_;
  if (!has_side()) m.side = 0;
  return m;
}

Vector Policy::logits(Eigen::Index row, const FeatureMasks& masks) const {
  Vector z = window_.row(row).transpose();
  add_rows(z, shared_, masks.shared);
  add_rows(z, side_, masks.side);
  return z;
}

Vector Policy::logits(std::span<const Token> context) const {
  check_tokens(context);
  return logits(window_row(context), feature_masks(context));
}

Categorical Policy::next_dist(std::span<const Token> context) const {
  return Categorical::from_logits(logits(context));
}

ScoreGradient Policy::grad_log_prob(std::span<const Token> context, Token token) const {
  if (token < 0 || token >= vocab_size_)
    throw std::out_of_range("unknown token id " + std::to_string(token));
  check_tokens(context);
  ScoreGradient g;
  g.window_row = window_row(context);
  const FeatureMasks masks = feature_masks(context);
  g.shared_mask = masks.shared;
  g.side_mask = masks.side;
  // Score of the unclamped softmax; the floor only guards logs downstream.
  const Vector z = logits(g.window_row, masks);
  g.coeff = -(z.array() - logsumexp(z)).exp().matrix();
  g.coeff(token) += 1.0;
  return g;
}

void Policy::apply(const ScoreGradient& g, double scale) {
  const Vector delta = scale * g.coeff;
  window_.row(g.window_row) += delta.transpose();
  bump_rows(shared_, g.shared_mask, delta);
  bump_rows(side_, g.side_mask, delta);
}

std::pair<TokenSeq, bool> Policy::sample_rollout(std::span<const Token> prompt, int max_len,
                                                 Token eos, Engine& rng) const {
  if (max_len < 1) throw std::invalid_argument("sample_rollout: max_len must be >= 1");
  TokenSeq ctx(prompt.begin(), prompt.end());
  check_tokens(ctx);
  TokenSeq out;
  out.reserve(static_cast<std::size_t>(max_len));
  for (int i = 0; i < max_len; ++i) {
    const Vector z = logits(window_row(ctx), feature_masks(ctx));
    const Vector p = (z.array() - logsumexp(z)).exp();
    const Token t = sample_index(rng, p);
    out.push_back(t);
    ctx.push_back(t);
    if (t == eos) return {out, false};
  }
  return {out, true};
}

Vector Policy::flat() const {
  Vector v(parameter_count());
  Eigen::Index k = 0;
  for (const Matrix* m : {&window_, &shared_, &side_})
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) v(k++) = (*m)(r, c);
  return v;
}

void Policy::set_flat(const Vector& v) {
  if (v.size() != parameter_count()) throw std::invalid_argument("set_flat: size mismatch");
  Eigen::Index k = 0;
  for (Matrix* m : {&window_, &shared_, &side_})
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) (*m)(r, c) = v(k++);
}

void Policy::accumulate(Vector& flat, const ScoreGradient& g, double scale) const {
  if (flat.size() != parameter_count()) throw std::invalid_argument("accumulate: size mismatch");
  const Eigen::Index v = vocab_size_;
  flat.segment(g.window_row * v, v) += scale * g.coeff;
  const auto add = [&](Eigen::Index base, std::uint64_t mask) {
    for (Eigen::Index c = 0; mask != 0; ++c, mask >>= 1)
      if (mask & 1u) flat.segment(base + c * v, v) += scale * g.coeff;
  };
  add(window_.size(), g.shared_mask);
  add(window_.size() + shared_.size(), g.side_mask);
}

bool Policy::operator==(const Policy& o) const {
  return vocab_size_ == o.vocab_size_ && context_order_ == o.context_order_ &&
         side_open_ == o.side_open_ && side_close_ == o.side_close_ &&
         shared_tokens_ == o.shared_tokens_ && step_ == o.step_ && window_ == o.window_ &&
         shared_ == o.shared_ && side_ == o.side_;
}

}  // namespace antisd
