#include "antisd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace antisd {

namespace {

Eigen::Index ipow(int base, int exp) {
  Eigen::Index r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

TokenSeq prefix_of(std::span<const Token> y, std::size_t n) { return TokenSeq(y.begin(), y.begin() + n); }

TokenSeq append(std::span<const Token> y, Token next) {
  TokenSeq out(y.begin(), y.end());
  out.push_back(next);
  return out;
}

double checked_log_ratio(double num, double den) {
  if (!(den > 0.0)) throw std::domain_error("zero-probability conditioning event");
  return std::log(num) - std::log(den);
}

}  // namespace

ExactJoint::ExactJoint(int vocab, int prompts, int c_len, int y_len)
    : vocab_(vocab), c_len_(c_len), y_len_(y_len) {
  if (vocab < 2 || vocab > 5) throw std::invalid_argument("ExactJoint: vocab must be in [2, 5]");
  if (prompts < 1) throw std::invalid_argument("ExactJoint: need at least one prompt");
  if (c_len < 1 || c_len > 3) throw std::invalid_argument("ExactJoint: |c| must be in [1, 3]");
  if (y_len < 1 || y_len > 4) throw std::invalid_argument("ExactJoint: |y| must be in [1, 4]");
  blocks_.assign(static_cast<std::size_t>(prompts),
                 Matrix::Ones(ipow(vocab, c_len), ipow(vocab, y_len)));
}

ExactJoint ExactJoint::random(int vocab, int prompts, int c_len, int y_len, Engine& rng,
                              double scale) {
  ExactJoint j(vocab, prompts, c_len, y_len);
  for (auto& b : j.blocks_)
    for (Eigen::Index c = 0; c < b.cols(); ++c)
      for (Eigen::Index r = 0; r < b.rows(); ++r) b(r, c) = std::exp(scale * uniform01(rng));
  return j;
}

ExactJoint ExactJoint::independent(int vocab, int prompts, int c_len, int y_len, Engine& rng) {
  ExactJoint j(vocab, prompts, c_len, y_len);
  for (auto& b : j.blocks_) {
    Vector a(b.rows()), w(b.cols());
    for (auto& v : a) v = std::exp(3.0 * uniform01(rng));
    for (auto& v : w) v = std::exp(3.0 * uniform01(rng));
    b = a * w.transpose();
  }
  return j;
}

void ExactJoint::check(int x, std::span<const Token> c, std::span<const Token> y,
                       bool full_y) const {
  if (x < 0 || x >= prompts()) throw std::out_of_range("ExactJoint: prompt index out of range");
  if (static_cast<int>(c.size()) != c_len_)
    throw std::invalid_argument("ExactJoint: c has the wrong length");
  if (full_y ? static_cast<int>(y.size()) != y_len_ : static_cast<int>(y.size()) > y_len_)
    throw std::invalid_argument("ExactJoint: y has the wrong length");
  for (Token t : c)
    if (t < 0 || t >= vocab_) throw std::out_of_range("ExactJoint: c token out of range");
  for (Token t : y)
    if (t < 0 || t >= vocab_) throw std::out_of_range("ExactJoint: y token out of range");
}

Eigen::Index ExactJoint::c_index(std::span<const Token> c) const {
  Eigen::Index i = 0;
  for (Token t : c) i = i * vocab_ + t;
  return i;
}

Eigen::Index ExactJoint::y_index(std::span<const Token> y) const {
  Eigen::Index i = 0;
  for (Token t : y) i = i * vocab_ + t;
  return i;
}

double ExactJoint::mass(int x, std::span<const Token> c, std::span<const Token> y_prefix) const {
  check(x, c, y_prefix, false);
  const Eigen::Index width = ipow(vocab_, y_len_ - static_cast<int>(y_prefix.size()));
  return block(x).row(c_index(c)).segment(y_index(y_prefix) * width, width).sum();
}

double ExactJoint::mass(int x, std::span<const Token> y_prefix) const {
  check(x, TokenSeq(static_cast<std::size_t>(c_len_), 0), y_prefix, false);
  const Eigen::Index width = ipow(vocab_, y_len_ - static_cast<int>(y_prefix.size()));
  return block(x).middleCols(y_index(y_prefix) * width, width).sum();
}

double ExactJoint::log_cond_next(int x, std::span<const Token> c, std::span<const Token> y_prefix,
                                 Token next) const {
  return checked_log_ratio(mass(x, c, append(y_prefix, next)), mass(x, c, y_prefix));
}

double ExactJoint::log_cond_next(int x, std::span<const Token> y_prefix, Token next) const {
  return checked_log_ratio(mass(x, append(y_prefix, next)), mass(x, y_prefix));
}

double ExactJoint::log_posterior(int x, std::span<const Token> c,
                                 std::span<const Token> y_prefix) const {
  return checked_log_ratio(mass(x, c, y_prefix), mass(x, y_prefix));
}

Categorical ExactJoint::next_dist(std::span<const Token> context) const {
  if (context.empty()) throw std::invalid_argument("ExactJoint: empty context");
  const int x = context[0];
  std::span<const Token> rest = context.subspan(1);
  std::optional<TokenSeq> c;
  if (!rest.empty() && rest[0] == marker()) {
    if (rest.size() < static_cast<std::size_t>(c_len_) + 1)
      throw std::invalid_argument("ExactJoint: truncated privileged segment");
    c = TokenSeq(rest.begin() + 1, rest.begin() + 1 + c_len_);
    rest = rest.subspan(static_cast<std::size_t>(c_len_) + 1);
  }
  if (static_cast<int>(rest.size()) >= y_len_)
    throw std::invalid_argument("ExactJoint: context already holds a full y");
  // Far below the floor: the marker gets exactly the floor after clamping.
  Vector logits = Vector::Constant(vocab_ + 1, -1000.0);
  for (Token v = 0; v < vocab_; ++v)
    logits(v) = c ? log_cond_next(x, *c, rest, v) : log_cond_next(x, rest, v);
  return Categorical::from_logits(logits);
}

std::pair<double, double> exact_pmi(const ExactJoint& joint, int x, std::span<const Token> c,
                                    std::span<const Token> y, int t) {
  if (t < 0 || t >= static_cast<int>(y.size())) throw std::out_of_range("exact_pmi: bad position");
  const auto n = static_cast<std::size_t>(t);
  const TokenSeq before = prefix_of(y, n);
  const TokenSeq through = prefix_of(y, n + 1);
  const double lhs =
      joint.log_cond_next(x, c, before, y[n]) - joint.log_cond_next(x, before, y[n]);
  const double rhs = joint.log_posterior(x, c, through) - joint.log_posterior(x, c, before);
  return {lhs, rhs};
}

std::pair<double, double> telescope_check(const ExactJoint& joint, int x,
                                          std::span<const Token> c, std::span<const Token> y) {
  double sum = 0.0;
  for (int t = 0; t < static_cast<int>(y.size()); ++t) sum += exact_pmi(joint, x, c, y, t).first;
  const double seq = joint.log_posterior(x, c, y) - joint.log_posterior(x, c, {});
  return {sum, seq};
}

std::vector<double> potentials(const ExactJoint& joint, int x, std::span<const Token> c,
                               std::span<const Token> y) {
  std::vector<double> out;
  for (std::size_t n = 0; n <= y.size(); ++n)
    out.push_back(joint.log_posterior(x, c, prefix_of(y, n)));
  return out;
}

Vector flat_score(const Policy& policy, std::span<const Token> context, Token v) {
  Vector g = Vector::Zero(policy.parameter_count());
  policy.accumulate(g, policy.grad_log_prob(context, v), 1.0);
  return g;
}

GradCheck fd_gradient_check(const Policy& policy, std::span<const Token> student_context,
                            std::span<const Token> teacher_context, Divergence divergence,
                            double step) {
  const Categorical pt = policy.next_dist(teacher_context);
  const auto div = [&](const Policy& p) {
    const Categorical ps = p.next_dist(student_context);
    return divergence == Divergence::reverse_kl ? kl(ps, pt) : jsd(ps, pt);
  };

  const Categorical ps = policy.next_dist(student_context);
  Vector est = Vector::Zero(policy.parameter_count());
  for (Token v = 0; v < policy.vocab_size(); ++v) {
    const double p = std::exp(ps.log_prob(v));
    const double u = pt.log_prob(v) - ps.log_prob(v);
    const double w = divergence == Divergence::reverse_kl ? -u : fprime_jsd(std::exp(-u));
    policy.accumulate(est, policy.grad_log_prob(student_context, v), p * w);
  }

  // Active parameters are exactly the support of any score vector here.
  ScoreGradient ones = policy.grad_log_prob(student_context, 0);
  ones.coeff.setOnes();
  Vector support = Vector::Zero(policy.parameter_count());
  policy.accumulate(support, ones, 1.0);

  GradCheck out;
  const Vector theta = policy.flat();
  Policy probe = policy;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (support(i) == 0.0) continue;
    Vector shifted = theta;
    shifted(i) = theta(i) + step;
    probe.set_flat(shifted);
    const double up = div(probe);
    shifted(i) = theta(i) - step;
    probe.set_flat(shifted);
    const double down = div(probe);
    const double fd = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(est(i)), std::abs(fd), kFdAbsFloor / kFdRelTol});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(est(i) - fd) / denom);
    out.max_abs_estimator = std::max(out.max_abs_estimator, std::abs(est(i)));
    out.max_abs_fd = std::max(out.max_abs_fd, std::abs(fd));
    ++out.params_checked;
  }
  return out;
}

Policy random_tabular_policy(int vocab, int order, Engine& rng, double scale) {
  Policy p(vocab, order);
  Vector theta(p.parameter_count());
  for (auto& v : theta) v = scale * (2.0 * uniform01(rng) - 1.0);
  p.set_flat(theta);
  return p;
}

namespace {

TokenSeq random_tokens(Engine& rng, int vocab, std::size_t n) {
  TokenSeq s(n);
  for (auto& t : s) t = static_cast<Token>(uniform_below(rng, static_cast<std::uint64_t>(vocab)));
  return s;
}

int random_in(Engine& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

}  // namespace

std::vector<CheckResult> gradcheck_suite(int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("gradcheck: trials must be >= 1");
  constexpr int kVocab = 8;
  std::vector<CheckResult> out;

  for (auto div : {Divergence::reverse_kl, Divergence::jsd}) {
    CheckResult r{div == Divergence::reverse_kl ? "reverse_kl_estimator_vs_fd" : "jsd_estimator_vs_fd",
                  0.0, kFdRelTol, trials, false};
    Engine rng = make_engine(stream_seed(seed, 0x6d, static_cast<std::uint64_t>(div)));
    for (int i = 0; i < trials; ++i) {
      const Policy p = random_tabular_policy(kVocab, 2, rng);
      const TokenSeq student = random_tokens(rng, kVocab, static_cast<std::size_t>(random_in(rng, 1, 5)));
      TokenSeq teacher = random_tokens(rng, kVocab, static_cast<std::size_t>(random_in(rng, 2, 6)));
      // distinct windows so the two distributions differ
      while (p.window_row(teacher) == p.window_row(student)) teacher.back() = (teacher.back() + 1) % kVocab;
      r.max_error = std::max(r.max_error, fd_gradient_check(p, student, teacher, div).max_rel_error);
    }
    r.passed = r.max_error <= r.tolerance;
    out.push_back(r);
  }

  CheckResult pmi{"pmi_two_sides", 0.0, 1e-10, trials, false};
  CheckResult tele{"telescoping_sum", 0.0, 1e-10, trials, false};
  CheckResult pot{"potential_increments", 0.0, 1e-10, trials, false};
  CheckResult path{"score_rollout_on_exact_joint", 0.0, 1e-10, trials, false};
  Engine rng = make_engine(stream_seed(seed, 0x9a1));
  for (int i = 0; i < trials; ++i) {
    const int v = random_in(rng, 2, 5);
    const int c_len = random_in(rng, 1, 3);
    const int y_len = random_in(rng, 1, 4);
    const ExactJoint j = ExactJoint::random(v, 2, c_len, y_len, rng);
    const int x = random_in(rng, 0, 1);
    const TokenSeq c = random_tokens(rng, v, static_cast<std::size_t>(c_len));
    const TokenSeq y = random_tokens(rng, v, static_cast<std::size_t>(y_len));
    std::vector<double> u;
    for (int t = 0; t < y_len; ++t) {
      const auto [lhs, rhs] = exact_pmi(j, x, c, y, t);
      pmi.max_error = std::max(pmi.max_error, std::abs(lhs - rhs));
      u.push_back(lhs);
    }
    const auto [sum, seq] = telescope_check(j, x, c, y);
    tele.max_error = std::max(tele.max_error, std::abs(sum - seq));
    const std::vector<double> phi_t = potentials(j, x, c, y);
    for (std::size_t t = 0; t < u.size(); ++t)
      pot.max_error = std::max(pot.max_error, std::abs(u[t] - (phi_t[t + 1] - phi_t[t])));
    const TokenSeq prompt{x};
    TokenSeq privileged{j.marker()};
    privileged.insert(privileged.end(), c.begin(), c.end());
    const auto scores = score_rollout(j, prompt, privileged, y);
    for (std::size_t t = 0; t < u.size(); ++t)
      path.max_error = std::max(path.max_error, std::abs(scores[t].u - u[t]));
  }
  for (CheckResult* r : {&pmi, &tele, &pot, &path}) {
    r->passed = r->max_error <= r->tolerance;
    out.push_back(*r);
  }

  CheckResult ident{"score_function_identity", 0.0, 1e-12, trials, false};
  Engine irng = make_engine(stream_seed(seed, 0x1de));
  for (int i = 0; i < trials; ++i) {
    const Policy p = random_tabular_policy(kVocab, 2, irng);
    const TokenSeq ctx = random_tokens(irng, kVocab, 3);
    const std::function<Vector(Token)> score = [&](Token v) { return flat_score(p, ctx, v); };
    ident.max_error = std::max(ident.max_error, enum_expectation(p, ctx, score).cwiseAbs().maxCoeff());
  }
  ident.passed = ident.max_error <= ident.tolerance;
  out.push_back(ident);
  return out;
}

}  // namespace antisd
