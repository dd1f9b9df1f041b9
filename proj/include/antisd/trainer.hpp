#pragma once

// One training step, the warmup/calibration phase, the run loop, checkpoints
// and evaluation.
//
// Step order: sample G rollouts per prompt, verify, build privileged
// contexts, score student and teacher, batch entropy median, gate, lambda,
// per-token advantages, one clipped policy-gradient pass, metrics.
// The loss is summed over rollouts and tokens, so learning_rate is the step
// taken per unit advantage per token.

#include "antisd/entropy_gate.hpp"
#include "antisd/grpo_advantage.hpp"
#include "antisd/pmi_signal.hpp"
#include "antisd/policy.hpp"
#include "antisd/policy_env.hpp"

#include <json.hpp>

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace antisd {

struct TrainConfig {
  double learning_rate = 0.05;
  int steps = 300;
  int batch_prompts = 16;
  int group_size = 8;
  double lambda_max = 0.5;
  int warmup_steps = 5;
  double gate_multiplier = 0.93;
  double clip_ratio = 0.2;
  SignalMode signal_mode = SignalMode::jsd_ascent;
  ComposeMode compose_mode = ComposeMode::additive;
  bool gate_enabled = true;
  // Holds lambda at 0 after warmup. The GRPO arm is this with lambda_max = 0.
  bool gate_forced_closed = false;
  GateSignal gate_signal_source = GateSignal::teacher_entropy;
  TaskConfig task;
  PretrainConfig pretrain;
  int context_order = 2;
  bool shared_bos = true;
  int max_len = 12;
  std::uint64_t seed = 1;
  int eval_k = 8;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  int rolling_window = 20;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are errors. Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  /// FNV-1a over the fields that fix the parameter layout and the task.
  std::string structural_hash() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Presets for the comparison arms, built on top of `base`.
TrainConfig grpo_arm(TrainConfig base);
TrainConfig antisd_arm(TrainConfig base);
TrainConfig sd_arm(TrainConfig base);
TrainConfig no_teacher_arm(TrainConfig base);

/// KEY=VALUE with dotted keys for nested fields (task.seed=3). VALUE is read
/// as JSON when it parses, else as a string. "steps=+N" is relative: to
/// resume_step when given, else to the current value.
void apply_override(TrainConfig& cfg, const std::string& assignment,
                    std::optional<long> resume_step = std::nullopt);

struct ScoredRollout {
  std::size_t problem = 0;
  TokenSeq prompt;
  TokenSeq tokens;
  double reward = 0.0;
  bool truncated = false;
  PrivilegedContext privileged;
  std::vector<TokenScore> scores;
  double a_seq = 0.0;
  std::vector<double> delta;
  std::vector<double> advantage;  // filled once lambda is known
};

struct StepBatch {
  long step = 0;
  std::vector<ScoredRollout> rollouts;  // prompt-major: rollout b*G + i
  double batch_median = 0.0;
  int g = 0;  // effective gate: 0 during warmup or when held closed
  double lambda = 0.0;
  bool warmup = false;
};

/// Sampling, verification, privileged contexts, scores, a_seq and delta for
/// the given problems. Errors carry the step and rollout index.
StepBatch collect_batch(const Policy& policy, const Task& task, const TrainConfig& cfg, long step,
                        const std::vector<std::size_t>& problems);

void assign_advantages(StepBatch& batch, double lambda, ComposeMode mode);

/// Flat gradient of the clipped surrogate sum_{i,t} min(r A, clip(r) A) with
/// r = pi(y_t) / pi_behaviour(y_t), evaluated at `policy`. behaviour log-probs
/// are the scores recorded in the batch.
Vector surrogate_gradient(const Policy& policy, const StepBatch& batch, double clip_ratio);
/// Flat sum_{i,t} A_{i,t} grad log pi(y_t).
Vector reinforce_gradient(const Policy& policy, const StepBatch& batch);

/// One SGD step of learning_rate along the surrogate gradient. Every term is
/// evaluated at the pre-update parameters.
void apply_update(Policy& policy, const StepBatch& batch, double learning_rate,
                  double clip_ratio);

struct StepMetrics {
  long step = 0;
  double reward = 0.0;
  double reward_nontruncated = 0.0;
  double truncated_fraction = 0.0;
  double mean_length = 0.0;
  double student_entropy = 0.0;
  double teacher_entropy = 0.0;
  double batch_median = 0.0;
  int g = 0;
  double lambda = 0.0;
  bool warmup = false;
  double u_member = 0.0;     // mean u over tokens inside the verified solution
  double u_nonmember = 0.0;
  double rolling_reward = 0.0;  // NaN until the window is full
};

struct EvalResult {
  double avg_at_k = 0.0;
  double pass_at_k = 0.0;
  int k = 0;
  int problems = 0;
};

/// avg@k = mean per-problem fraction correct, pass@k = fraction of problems
/// with at least one correct sample.
EvalResult evaluate(const Policy& policy, const Task& task, int k, int max_len,
                    std::uint64_t seed);
/// Same arithmetic from a per-problem correctness table.
EvalResult evaluate_counts(const std::vector<std::vector<bool>>& correct);

struct Checkpoint {
  TrainConfig config;
  Policy policy;
  GateState gate;
  long step = 0;
  long arm_start_step = 0;
  std::size_t cursor = 0;
  std::vector<std::size_t> order;
  std::vector<double> reward_history;
  std::string config_hash;

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct RunReport {
  TrainConfig config;
  long start_step = 0;
  long final_step = 0;
  std::vector<StepMetrics> metrics;
  double best_rolling = 0.0;
  long best_rolling_step = 0;
  double final_rolling = 0.0;
  double h_warm = 0.0;
  double tau_down = 0.0;
  bool recalibrated = false;
  EvalResult eval;

  nlohmann::json to_json() const;
};

/// Writes "step,rollout,pos,..." rows with 17 significant digits.
class TraceWriter {
 public:
  explicit TraceWriter(std::ostream& out);
  void write(const StepBatch& batch, ComposeMode mode);

 private:
  std::ostream* out_;
};

class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream& out);
  void write(const StepMetrics& m);

 private:
  std::ostream* out_;
};

std::string format_double(double v);

struct TrainHooks {
  TraceWriter* trace = nullptr;
  MetricsWriter* metrics = nullptr;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

class Trainer {
 public:
  /// Fresh run: builds the task, pretrains the base policy, shuffles the
  /// dataset cycle.
  explicit Trainer(const TrainConfig& cfg);
  /// Resume. Throws on a structural hash mismatch. When the arm settings
  /// differ from the checkpoint's, the gate is recalibrated with a new
  /// warmup; otherwise the checkpointed gate carries on.
  Trainer(const Checkpoint& ckpt, const TrainConfig& cfg);

  using Hooks = TrainHooks;

  StepMetrics train_step(const Hooks& hooks);
  StepMetrics train_step() { return train_step(Hooks{}); }
  /// Runs steps at lambda = 0 until the gate is calibrated.
  GateState warmup_and_calibrate(const Hooks& hooks = {});
  /// Steps until config().steps, then evaluates.
  RunReport run(const Hooks& hooks = {});

  Checkpoint checkpoint() const;
  EvalResult evaluate(int k) const;

  const TrainConfig& config() const { return cfg_; }
  const Task& task() const { return task_; }
  const Policy& policy() const { return policy_; }
  Policy& policy() { return policy_; }
  const GateState& gate() const { return gate_; }
  long step() const { return step_; }
  bool recalibrated() const { return recalibrated_; }
  const std::vector<double>& reward_history() const { return rewards_; }

 private:
  std::vector<std::size_t> next_problems();
  GateState fresh_gate() const;

  TrainConfig cfg_;
  Task task_;
  Policy policy_;
  GateState gate_;
  long step_ = 0;
  long arm_start_step_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::vector<double> rewards_;
  bool recalibrated_ = false;
};

/// Mean of the last `window` values ending at each index; NaN before the
/// window fills.
std::vector<double> rolling_mean(const std::vector<double>& values, int window);

struct TraceSummary {
  double u_member = 0.0;
  double u_nonmember = 0.0;
  long member_tokens = 0;
  long nonmember_tokens = 0;
};

/// Samples one group per problem for `count` problems from the checkpointed
/// policy, scores it like a training step without updating, and writes the
/// records. Membership: the token appears in the verified solution.
TraceSummary trace_policy(const Checkpoint& ckpt, int count, std::uint64_t seed,
                          TraceWriter* writer);

}  // namespace antisd
