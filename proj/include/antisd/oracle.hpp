#pragma once

// Brute-force verifiers: an enumerated joint P(c, y | x) for the PMI and
// telescoping identities, finite-difference checks of the two gradient
// estimators, and exact expectations over the vocabulary.

#include "antisd/core_math.hpp"
#include "antisd/pmi_signal.hpp"
#include "antisd/policy.hpp"
#include "antisd/rng.hpp"

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace antisd {

/// Unnormalized table W(x, c, y) with c in V^c_len and y in V^y_len.
/// One dense (V^c_len x V^y_len) block per prompt x; y_1 is the most
/// significant digit of the column index, so every y-prefix is a
/// contiguous column range.
class ExactJoint {
 public:
  ExactJoint(int vocab, int prompts, int c_len, int y_len);

  /// exp(scale * U[0,1)) per entry: strictly positive.
  static ExactJoint random(int vocab, int prompts, int c_len, int y_len, Engine& rng,
                           double scale = 3.0);
  /// W(x, c, y) = a(x, c) * b(x, y), so c and y are independent given x.
  static ExactJoint independent(int vocab, int prompts, int c_len, int y_len, Engine& rng);

  int vocab() const { return vocab_; }
  int prompts() const { return static_cast<int>(blocks_.size()); }
  int c_len() const { return c_len_; }
  int y_len() const { return y_len_; }

  Matrix& block(int x) { return blocks_.at(static_cast<std::size_t>(x)); }
  const Matrix& block(int x) const { return blocks_.at(static_cast<std::size_t>(x)); }
  double normalizer(int x) const { return block(x).sum(); }

  Eigen::Index c_index(std::span<const Token> c) const;
  Eigen::Index y_index(std::span<const Token> y) const;

  /// Mass of {c, y starting with prefix} and of {any c, y starting with prefix}.
  double mass(int x, std::span<const Token> c, std::span<const Token> y_prefix) const;
  double mass(int x, std::span<const Token> y_prefix) const;

  /// log P(next | x, [c,] y_prefix), computed from prefix masses.
  double log_cond_next(int x, std::span<const Token> c, std::span<const Token> y_prefix,
                       Token next) const;
  double log_cond_next(int x, std::span<const Token> y_prefix, Token next) const;
  /// log P(c | x, y_prefix)
  double log_posterior(int x, std::span<const Token> c, std::span<const Token> y_prefix) const;

  /// Next-token distributions as a conditional model. A context is
  /// [x] + y_prefix for the student, [x, marker] + c + y_prefix for the
  /// teacher, where marker = vocab(). Distributions are over vocab()+1 tokens
  /// with the marker at the floor.
  Categorical next_dist(std::span<const Token> context) const;
  Token marker() const { return vocab_; }

 private:
  void check(int x, std::span<const Token> c, std::span<const Token> y, bool full_y) const;

  int vocab_;
  int c_len_;
  int y_len_;
  std::vector<Matrix> blocks_;
};

/// Both sides of the PMI identity at position t (0-based):
///   first  = log P(y_t | x, c, y_<t) - log P(y_t | x, y_<t)
///   second = log P(c | x, y_<=t)     - log P(c | x, y_<t)
std::pair<double, double> exact_pmi(const ExactJoint& joint, int x, std::span<const Token> c,
                                    std::span<const Token> y, int t);

/// {sum_t u_t, log P(c|x,y) - log P(c|x)}
std::pair<double, double> telescope_check(const ExactJoint& joint, int x,
                                          std::span<const Token> c, std::span<const Token> y);

/// Phi_t = log P(c | x, y_<=t) for t = 0..T (Phi_0 conditions on the empty prefix).
std::vector<double> potentials(const ExactJoint& joint, int x, std::span<const Token> c,
                               std::span<const Token> y);

enum class Divergence { reverse_kl, jsd };

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_estimator = 0.0;
  double max_abs_fd = 0.0;
  Eigen::Index params_checked = 0;
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-5;
inline constexpr double kFdAbsFloor = 1e-9;

/// Compares the enumerated score-function estimator of the divergence
/// gradient with central finite differences of the divergence itself, over
/// every parameter active in the student context. The teacher distribution
/// is evaluated once at the unperturbed parameters and held fixed.
///   reverse_kl: -E_{v~pS}[u_v grad log pS(v)]     vs  d/dtheta KL(pS || pT)
///   jsd:         E_{v~pS}[f'(pS/pT) grad log pS(v)] vs  d/dtheta JSD(pS, pT)
/// Relative error per entry is |est - fd| / max(|est|, |fd|, abs_floor / rel_tol).
GradCheck fd_gradient_check(const Policy& policy, std::span<const Token> student_context,
                            std::span<const Token> teacher_context, Divergence divergence,
                            double step = kFdStep);

/// sum_v pS(v | context) * weight(v). T is a scalar or an Eigen vector.
template <typename T>
T enum_expectation(const Policy& policy, std::span<const Token> context,
                   const std::function<T(Token)>& weight) {
  const Categorical p = policy.next_dist(context);
  T total = std::exp(p.log_prob(0)) * weight(0);
  for (Token v = 1; v < policy.vocab_size(); ++v) total += std::exp(p.log_prob(v)) * weight(v);
  return total;
}

/// grad log pS(v | context) over the flat parameter vector.
Vector flat_score(const Policy& policy, std::span<const Token> context, Token v);

/// Tabular policy (no shared or side rows) with logits uniform in [-scale, scale].
Policy random_tabular_policy(int vocab, int order, Engine& rng, double scale = 2.0);

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  int trials = 0;
  bool passed = false;
};

/// Randomized oracle checks: both gradient estimators against finite
/// differences (V = 8), the PMI identity, telescoping, potential increments,
/// the score_rollout path on exact conditionals, and the score identity.
std::vector<CheckResult> gradcheck_suite(int trials, std::uint64_t seed);

}  // namespace antisd
