#pragma once

// Per-token student/teacher scores and the per-token advantage term.
//
// The teacher is the same policy evaluated on prompt + privileged + prefix,
// the student on prompt + prefix. u_t = t_t - s_t is the conditional PMI of
// y_t and the privileged context.

#include "antisd/core_math.hpp"
#include "antisd/policy.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace antisd {

struct TokenScore {
  double s = 0.0;  // log pi(y_t | prompt, y_<t)
  double t = 0.0;  // log pi(y_t | prompt, privileged, y_<t), a constant
  double u = 0.0;  // t - s
  double teacher_entropy = 0.0;
  double student_entropy = 0.0;
  int position = 0;
  Token token = 0;
};

enum class SignalMode { sd_reverse_kl_descent, reverse_kl_ascent, jsd_ascent, no_teacher };

std::string_view to_string(SignalMode m);
SignalMode signal_mode_from_string(std::string_view s);

/// Context layout shared by scoring and training: prompt, then privileged, then prefix.
TokenSeq enriched_context(std::span<const Token> prompt, std::span<const Token> privileged,
                          std::span<const Token> prefix);

/// One score per rollout token. Errors name the rollout position.
/// Model needs next_dist(span<const Token>) -> Categorical.
template <typename Model>
std::vector<TokenScore> score_rollout(const Model& model, std::span<const Token> prompt,
                                      std::span<const Token> privileged,
                                      std::span<const Token> rollout) {
  if (rollout.empty()) throw std::invalid_argument("score_rollout: empty rollout");
  TokenSeq student(prompt.begin(), prompt.end());
  TokenSeq teacher = enriched_context(prompt, privileged, {});
  std::vector<TokenScore> out;
  out.reserve(rollout.size());
  for (std::size_t i = 0; i < rollout.size(); ++i) {
    const Token y = rollout[i];
    try {
      const Categorical ps = model.next_dist(student);
      const Categorical pt = model.next_dist(teacher);
      if (y < 0 || y >= ps.size())
        throw std::out_of_range("unknown token id " + std::to_string(y));
      TokenScore ts;
      ts.s = ps.log_prob(y);
      ts.t = pt.log_prob(y);
      ts.u = ts.t - ts.s;
      ts.teacher_entropy = entropy(pt);
      ts.student_entropy = entropy(ps);
      ts.position = static_cast<int>(i);
      ts.token = y;
      out.push_back(ts);
    } catch (const std::exception& e) {
      throw std::out_of_range("score_rollout: rollout position " + std::to_string(i) + ": " +
                              e.what());
    }
    student.push_back(y);
    teacher.push_back(y);
  }
  return out;
}

template <typename Scalar>
Scalar delta(Scalar u, SignalMode mode, Scalar student_logprob) {
  switch (mode) {
    case SignalMode::sd_reverse_kl_descent:
      return u;
    case SignalMode::reverse_kl_ascent:
      return -u;
    case SignalMode::jsd_ascent:
      return -phi(u);
    case SignalMode::no_teacher:
      // teacher log-prob taken as 0, so u = -s
      return -phi(-student_logprob);
  }
  return Scalar(0);
}

inline double delta(const TokenScore& ts, SignalMode mode) { return delta(ts.u, mode, ts.s); }

}  // namespace antisd
