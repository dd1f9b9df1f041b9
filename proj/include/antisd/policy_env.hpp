#pragma once

// Synthetic verifiable-reward task, privileged-context assembly, and the
// imitation pretraining that gives RL a non-trivial base policy.
//
// Vocabulary: 7 control tokens, then D = V - 7 digits.
//   prompt   = BOS key_1 .. key_L
//   rollout  = [derivation tokens] ANS solution EOS
// keyed_recall: key -> hidden digit m -> solution_j = g[(m + j) mod D],
// g a seeded permutation. multi_root accepts any of several roots.

#include "antisd/grpo_advantage.hpp"
#include "antisd/policy.hpp"
#include "antisd/rng.hpp"

#include <json.hpp>

#include <optional>
#include <string_view>
#include <vector>

namespace antisd {

namespace tok {
inline constexpr Token BOS = 0;
inline constexpr Token EOS = 1;
inline constexpr Token ANS = 2;
inline constexpr Token SOL = 3;
inline constexpr Token FB = 4;
inline constexpr Token OK = 5;
inline constexpr Token NO = 6;
inline constexpr Token D0 = 7;
}  // namespace tok

enum class TaskName { keyed_recall, multi_root };
std::string_view to_string(TaskName t);
TaskName task_name_from_string(std::string_view s);

struct TaskConfig {
  TaskName name = TaskName::keyed_recall;
  int vocab_size = 16;
  int key_length = 2;
  int solution_length = 1;
  std::uint64_t seed = 1;
  // Chance that m depends on the last key token only. Keys sharing that
  // token then share m, which the window of a k=2 policy can pick up.
  double structure = 0.6;
  int roots = 2;  // multi_root only

  friend bool operator==(const TaskConfig&, const TaskConfig&) = default;
};

struct Problem {
  TokenSeq prompt;
  std::vector<TokenSeq> solutions;  // [0] is the dataset reference
  std::vector<int> derivations;     // hidden digit behind each solution
};

class Task {
 public:
  Task() = default;
  explicit Task(const TaskConfig& cfg);

  const TaskConfig& config() const { return cfg_; }
  int digits() const { return cfg_.vocab_size - tok::D0; }
  const std::vector<Problem>& problems() const { return problems_; }
  const Problem& problem(std::size_t i) const { return problems_.at(i); }
  /// Throws std::invalid_argument for a prompt outside the problem set.
  const Problem& problem_for(std::span<const Token> prompt) const;
  /// solution_j = g[(m + j) mod D] for hidden digit m.
  TokenSeq solution_from(int m) const;
  const std::vector<int>& permutation() const { return g_; }

  nlohmann::json to_json() const;
  static Task from_json(const nlohmann::json& j);

 private:
  TaskConfig cfg_;
  std::vector<int> g_;
  std::vector<Problem> problems_;
};

/// Tokens strictly between the first ANS and the EOS that ends the rollout.
/// nullopt when either marker is missing.
std::optional<TokenSeq> answer_segment(std::span<const Token> rollout);

/// 1 iff the answer segment matches an accepted solution. Malformed rollouts score 0.
double verify(const Task& task, std::span<const Token> prompt, std::span<const Token> rollout);

enum class PrivilegedSource { group_rollout, dataset_reference, none };
std::string_view to_string(PrivilegedSource s);

struct PrivilegedContext {
  TokenSeq tokens;  // SOL solution FB feedback
  TokenSeq solution;
  PrivilegedSource source = PrivilegedSource::none;
};

/// Verified solution from the lowest-index correct rollout of the group,
/// else the dataset reference. The feedback token reports whether rollout
/// `scored` was correct. no_teacher returns an empty context.
PrivilegedContext build_privileged(const GroupBatch& group, const Task& task,
                                   std::span<const Token> prompt, std::size_t scored,
                                   bool no_teacher = false);

struct PretrainConfig {
  int steps = 3000;
  double learning_rate = 1.0;
  double open_book = 0.5;         // demos that carry a privileged context
  double shortcut = 0.7;          // closed-book demos that answer directly
  double shortcut_accuracy = 0.3;
  double derivation_accuracy = 0.6;

  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

/// V, window order, a shared BOS row, and a side table bracketed by SOL/FB.
Policy make_policy(const TaskConfig& task, int context_order, bool shared_bos);

/// Plain SGD on log-likelihood of a seeded demo corpus. Demos mix direct
/// answers, answers after a derivation digit, and open-book answers copied
/// from a privileged context.
void pretrain(Policy& policy, const Task& task, const PretrainConfig& cfg, Engine& rng);

}  // namespace antisd
