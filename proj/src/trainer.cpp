#include "antisd/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace antisd {

using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

std::string hex_bits(double v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

double from_hex_bits(const json& j) {
  const auto s = j.get<std::string>();
  if (s.size() != 16) throw std::invalid_argument("bad hex double '" + s + "'");
  return std::bit_cast<double>(static_cast<std::uint64_t>(std::stoull(s, nullptr, 16)));
}

json hex_vector(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(hex_bits(x));
  return a;
}

std::vector<double> from_hex_vector(const json& a) {
  std::vector<double> v;
  for (const auto& x : a) v.push_back(from_hex_bits(x));
  return v;
}

template <typename T>
T field(const json& j, const char* name, const std::string& prefix = "") {
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config field '" + prefix + name + "': " + e.what());
  }
}

// Rejects keys the defaults do not have, recursively.
void check_keys(const json& given, const json& known, const std::string& prefix) {
  if (!given.is_object()) throw std::invalid_argument("config: '" + prefix + "' must be an object");
  for (const auto& [k, v] : given.items()) {
    if (!known.contains(k)) throw std::invalid_argument("unknown config field '" + prefix + k + "'");
    if (known.at(k).is_object()) check_keys(v, known.at(k), prefix + k + ".");
  }
}

void merge(json& into, const json& from) {
  for (const auto& [k, v] : from.items()) {
    if (v.is_object() && into.contains(k) && into[k].is_object())
      merge(into[k], v);
    else
      into[k] = v;
  }
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool same_arm(const TrainConfig& a, const TrainConfig& b) {
  return a.signal_mode == b.signal_mode && a.compose_mode == b.compose_mode &&
         a.lambda_max == b.lambda_max && a.gate_enabled == b.gate_enabled &&
         a.gate_forced_closed == b.gate_forced_closed &&
         a.gate_signal_source == b.gate_signal_source &&
         a.gate_multiplier == b.gate_multiplier && a.warmup_steps == b.warmup_steps;
}

}  // namespace

void TrainConfig::validate() const {
  const auto bad = [](const std::string& f, const std::string& why) {
    throw std::invalid_argument("config field '" + f + "': " + why);
  };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate", "must be > 0");
  if (steps < 0) bad("steps", "must be >= 0");
  if (batch_prompts < 1) bad("batch_prompts", "must be >= 1");
  if (group_size < 2) bad("group_size", "must be >= 2");
  if (!(lambda_max >= 0.0) || !std::isfinite(lambda_max)) bad("lambda_max", "must be >= 0");
  if (warmup_steps < 1) bad("warmup_steps", "must be >= 1");
  if (!(gate_multiplier > 0.0 && gate_multiplier < 1.0)) bad("gate_multiplier", "must be in (0, 1)");
  if (!(clip_ratio > 0.0)) bad("clip_ratio", "must be > 0");
  if (context_order < 1 || context_order > 4) bad("context_order", "must be in [1, 4]");
  if (max_len < 1) bad("max_len", "must be >= 1");
  if (eval_k < 1) bad("eval_k", "must be >= 1");
  if (checkpoint_every < 0) bad("checkpoint_every", "must be >= 0");
  if (rolling_window < 1) bad("rolling_window", "must be >= 1");
  if (task.vocab_size < tok::D0 + 2 || task.vocab_size > 64)
    bad("task.vocab_size", "must be in [9, 64]");
  if (pretrain.steps < 0) bad("pretrain.steps", "must be >= 0");
  if (!(pretrain.learning_rate >= 0.0)) bad("pretrain.learning_rate", "must be >= 0");
  for (auto [name, p] : {std::pair{"pretrain.open_book", pretrain.open_book},
                         std::pair{"pretrain.shortcut", pretrain.shortcut},
                         std::pair{"pretrain.shortcut_accuracy", pretrain.shortcut_accuracy},
                         std::pair{"pretrain.derivation_accuracy", pretrain.derivation_accuracy},
                         std::pair{"task.structure", task.structure}})
    if (!(p >= 0.0 && p <= 1.0)) bad(name, "must be in [0, 1]");
}

json TrainConfig::to_json() const {
  json j;
  j["learning_rate"] = learning_rate;
  j["steps"] = steps;
  j["batch_prompts"] = batch_prompts;
  j["group_size"] = group_size;
  j["lambda_max"] = lambda_max;
  j["warmup_steps"] = warmup_steps;
  j["gate_multiplier"] = gate_multiplier;
  j["clip_ratio"] = clip_ratio;
  j["signal_mode"] = std::string(to_string(signal_mode));
  j["compose_mode"] = std::string(to_string(compose_mode));
  j["gate_enabled"] = gate_enabled;
  j["gate_forced_closed"] = gate_forced_closed;
  j["gate_signal_source"] = std::string(to_string(gate_signal_source));
  j["task"] = {{"name", std::string(to_string(task.name))},
               {"vocab_size", task.vocab_size},
               {"key_length", task.key_length},
               {"solution_length", task.solution_length},
               {"seed", task.seed},
               {"structure", task.structure},
               {"roots", task.roots}};
  j["pretrain"] = {{"steps", pretrain.steps},
                   {"learning_rate", pretrain.learning_rate},
                   {"open_book", pretrain.open_book},
                   {"shortcut", pretrain.shortcut},
                   {"shortcut_accuracy", pretrain.shortcut_accuracy},
                   {"derivation_accuracy", pretrain.derivation_accuracy}};
  j["context_order"] = context_order;
  j["shared_bos"] = shared_bos;
  j["max_len"] = max_len;
  j["seed"] = seed;
  j["eval_k"] = eval_k;
  j["checkpoint_every"] = checkpoint_every;
  j["rolling_window"] = rolling_window;
  return j;
}

TrainConfig TrainConfig::from_json(const json& given) {
  json full = TrainConfig{}.to_json();
  check_keys(given, full, "");
  merge(full, given);
  TrainConfig c;
  c.learning_rate = field<double>(full, "learning_rate");
  c.steps = field<int>(full, "steps");
  c.batch_prompts = field<int>(full, "batch_prompts");
  c.group_size = field<int>(full, "group_size");
  c.lambda_max = field<double>(full, "lambda_max");
  c.warmup_steps = field<int>(full, "warmup_steps");
  c.gate_multiplier = field<double>(full, "gate_multiplier");
  c.clip_ratio = field<double>(full, "clip_ratio");
  try {
    c.signal_mode = signal_mode_from_string(field<std::string>(full, "signal_mode"));
    c.compose_mode = compose_mode_from_string(field<std::string>(full, "compose_mode"));
    c.gate_signal_source = gate_signal_from_string(field<std::string>(full, "gate_signal_source"));
    c.task.name = task_name_from_string(field<std::string>(full.at("task"), "name", "task."));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.gate_enabled = field<bool>(full, "gate_enabled");
  c.gate_forced_closed = field<bool>(full, "gate_forced_closed");
  const json& t = full.at("task");
  c.task.vocab_size = field<int>(t, "vocab_size", "task.");
  c.task.key_length = field<int>(t, "key_length", "task.");
  c.task.solution_length = field<int>(t, "solution_length", "task.");
  c.task.seed = field<std::uint64_t>(t, "seed", "task.");
  c.task.structure = field<double>(t, "structure", "task.");
  c.task.roots = field<int>(t, "roots", "task.");
  const json& p = full.at("pretrain");
  c.pretrain.steps = field<int>(p, "steps", "pretrain.");
  c.pretrain.learning_rate = field<double>(p, "learning_rate", "pretrain.");
  c.pretrain.open_book = field<double>(p, "open_book", "pretrain.");
  c.pretrain.shortcut = field<double>(p, "shortcut", "pretrain.");
  c.pretrain.shortcut_accuracy = field<double>(p, "shortcut_accuracy", "pretrain.");
  c.pretrain.derivation_accuracy = field<double>(p, "derivation_accuracy", "pretrain.");
  c.context_order = field<int>(full, "context_order");
  c.shared_bos = field<bool>(full, "shared_bos");
  c.max_len = field<int>(full, "max_len");
  c.seed = field<std::uint64_t>(full, "seed");
  c.eval_k = field<int>(full, "eval_k");
  c.checkpoint_every = field<int>(full, "checkpoint_every");
  c.rolling_window = field<int>(full, "rolling_window");
  c.validate();
  return c;
}

std::string TrainConfig::structural_hash() const {
  const json j = to_json();
  const json s = {{"task", j.at("task")},
                  {"context_order", context_order},
                  {"shared_bos", shared_bos}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(s.dump())));
  return buf;
}

TrainConfig grpo_arm(TrainConfig base) {
  base.lambda_max = 0.0;
  base.gate_forced_closed = true;
  return base;
}

TrainConfig antisd_arm(TrainConfig base) {
  base.signal_mode = SignalMode::jsd_ascent;
  base.gate_forced_closed = false;
  return base;
}

TrainConfig sd_arm(TrainConfig base) {
  base.signal_mode = SignalMode::sd_reverse_kl_descent;
  base.gate_forced_closed = false;
  return base;
}

TrainConfig no_teacher_arm(TrainConfig base) {
  base.signal_mode = SignalMode::no_teacher;
  base.gate_forced_closed = false;
  return base;
}

void apply_override(TrainConfig& cfg, const std::string& assignment,
                    std::optional<long> resume_step) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + assignment + "' is not KEY=VALUE");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  json value;
  if (key == "steps" && !text.empty() && text.front() == '+') {
    long n = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + 1, text.data() + text.size(), n);
    if (ec != std::errc{} || ptr != text.data() + text.size() || n < 0)
      throw std::invalid_argument("override 'steps': bad relative value '" + text + "'");
    value = (resume_step ? *resume_step : cfg.steps) + n;
  } else {
    value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
  }

  json patch = json::object();
  json* node = &patch;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
  json full = cfg.to_json();
  check_keys(patch, full, "");
  merge(full, patch);
  cfg = TrainConfig::from_json(full);
}

// ---------------------------------------------------------------- step

StepBatch collect_batch(const Policy& policy, const Task& task, const TrainConfig& cfg, long step,
                        const std::vector<std::size_t>& problems) {
  StepBatch batch;
  batch.step = step;
  const bool no_teacher = cfg.signal_mode == SignalMode::no_teacher;
  const auto G = static_cast<std::size_t>(cfg.group_size);
  batch.rollouts.reserve(problems.size() * G);
  for (std::size_t b = 0; b < problems.size(); ++b) {
    const Problem& problem = task.problem(problems[b]);
    Engine rng = make_engine(stream_seed(cfg.seed, static_cast<std::uint64_t>(step), b));
    GroupBatch group;
    group.prompt_id = static_cast<int>(problems[b]);
    for (std::size_t i = 0; i < G; ++i) {
      auto [tokens, truncated] = policy.sample_rollout(problem.prompt, cfg.max_len, tok::EOS, rng);
      group.rewards.push_back(truncated ? 0.0 : verify(task, problem.prompt, tokens));
      group.rollouts.push_back(std::move(tokens));
      group.truncated.push_back(truncated);
    }
    const std::vector<double> a_seq = seq_advantage(group.rewards);
    for (std::size_t i = 0; i < G; ++i) {
      const std::size_t index = b * G + i;
      try {
        ScoredRollout r;
        r.problem = problems[b];
        r.prompt = problem.prompt;
        r.tokens = group.rollouts[i];
        r.reward = group.rewards[i];
        r.truncated = group.truncated[i];
        r.privileged = build_privileged(group, task, problem.prompt, i, no_teacher);
        r.scores = score_rollout(policy, r.prompt, r.privileged.tokens, r.tokens);
        r.a_seq = a_seq[i];
        for (const auto& ts : r.scores) r.delta.push_back(delta(ts, cfg.signal_mode));
        batch.rollouts.push_back(std::move(r));
      } catch (const std::exception& e) {
        throw std::runtime_error("step " + std::to_string(step) + " rollout " +
                                 std::to_string(index) + ": " + e.what());
      }
    }
  }
  return batch;
}

void assign_advantages(StepBatch& batch, double lambda, ComposeMode mode) {
  batch.lambda = lambda;
  for (auto& r : batch.rollouts) {
    r.advantage.resize(r.delta.size());
    for (std::size_t t = 0; t < r.delta.size(); ++t)
      r.advantage[t] = compose(r.a_seq, r.delta[t], lambda, mode);
  }
}

namespace {

// d/dtheta min(r A, clip(r, 1-e, 1+e) A) = w grad log pi.
double surrogate_weight(double ratio, double a, double clip) {
  if ((a > 0.0 && ratio > 1.0 + clip) || (a < 0.0 && ratio < 1.0 - clip)) return 0.0;
  return a * ratio;
}

template <typename Visit>
void for_each_token(const StepBatch& batch, Visit&& visit) {
  for (const auto& r : batch.rollouts) {
    if (r.advantage.size() != r.tokens.size())
      throw std::logic_error("advantages not assigned for step " + std::to_string(batch.step));
    TokenSeq ctx = r.prompt;
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      visit(r, t, std::span<const Token>(ctx));
      ctx.push_back(r.tokens[t]);
    }
  }
}

}  // namespace

Vector surrogate_gradient(const Policy& policy, const StepBatch& batch, double clip_ratio) {
  Vector g = Vector::Zero(policy.parameter_count());
  for_each_token(batch, [&](const ScoredRollout& r, std::size_t t, auto ctx) {
    const Token y = r.tokens[t];
    const double ratio = std::exp(policy.next_dist(ctx).log_prob(y) - r.scores[t].s);
    policy.accumulate(g, policy.grad_log_prob(ctx, y),
                      surrogate_weight(ratio, r.advantage[t], clip_ratio));
  });
  return g;
}

Vector reinforce_gradient(const Policy& policy, const StepBatch& batch) {
  Vector g = Vector::Zero(policy.parameter_count());
  for_each_token(batch, [&](const ScoredRollout& r, std::size_t t, auto ctx) {
    policy.accumulate(g, policy.grad_log_prob(ctx, r.tokens[t]), r.advantage[t]);
  });
  return g;
}

void apply_update(Policy& policy, const StepBatch& batch, double learning_rate,
                  double clip_ratio) {
  std::vector<std::pair<ScoreGradient, double>> terms;
  for_each_token(batch, [&](const ScoredRollout& r, std::size_t t, auto ctx) {
    const Token y = r.tokens[t];
    const double ratio = std::exp(policy.next_dist(ctx).log_prob(y) - r.scores[t].s);
    const double w = surrogate_weight(ratio, r.advantage[t], clip_ratio);
    if (w != 0.0) terms.emplace_back(policy.grad_log_prob(ctx, y), w);
  });
  for (const auto& [g, w] : terms) policy.apply(g, learning_rate * w);
}

// ---------------------------------------------------------------- eval

EvalResult evaluate_counts(const std::vector<std::vector<bool>>& correct) {
  EvalResult e;
  e.problems = static_cast<int>(correct.size());
  if (correct.empty()) return e;
  e.k = static_cast<int>(correct.front().size());
  for (const auto& row : correct) {
    if (row.empty()) throw std::invalid_argument("evaluate: k must be >= 1");
    const auto hits = static_cast<double>(std::count(row.begin(), row.end(), true));
    e.avg_at_k += hits / static_cast<double>(row.size());
    e.pass_at_k += hits > 0 ? 1.0 : 0.0;
  }
  e.avg_at_k /= static_cast<double>(correct.size());
  e.pass_at_k /= static_cast<double>(correct.size());
  return e;
}

EvalResult evaluate(const Policy& policy, const Task& task, int k, int max_len,
                    std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("evaluate: k must be >= 1");
  std::vector<std::vector<bool>> correct;
  for (std::size_t p = 0; p < task.problems().size(); ++p) {
    const Problem& problem = task.problem(p);
    Engine rng = make_engine(stream_seed(seed, 0xe7a1, p));
    std::vector<bool> row;
    for (int i = 0; i < k; ++i) {
      const auto [y, truncated] = policy.sample_rollout(problem.prompt, max_len, tok::EOS, rng);
      row.push_back(!truncated && verify(task, problem.prompt, y) == 1.0);
    }
    correct.push_back(std::move(row));
  }
  return evaluate_counts(correct);
}

// ---------------------------------------------------------------- writers

std::string format_double(double v) {
  char buf[40];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

TraceWriter::TraceWriter(std::ostream& out) : out_(&out) {
  *out_ << "step,rollout,pos,token,s,t,u,phi,delta,a_seq,a_total,g,lambda,teacher_entropy,"
           "batch_median,reward,truncated\n";
}

void TraceWriter::write(const StepBatch& batch, ComposeMode mode) {
  std::string line;
  for (std::size_t i = 0; i < batch.rollouts.size(); ++i) {
    const auto& r = batch.rollouts[i];
    for (std::size_t t = 0; t < r.scores.size(); ++t) {
      const auto& ts = r.scores[t];
      const double a_total =
          r.advantage.size() == r.scores.size() ? r.advantage[t]
                                                : compose(r.a_seq, r.delta[t], batch.lambda, mode);
      line.clear();
      line += std::to_string(batch.step) + ',' + std::to_string(i) + ',' + std::to_string(t) +
              ',' + std::to_string(ts.token);
      for (double v : {ts.s, ts.t, ts.u, phi(ts.u), r.delta[t], r.a_seq, a_total})
        line += ',' + format_double(v);
      line += ',' + std::to_string(batch.g);
      for (double v : {batch.lambda, ts.teacher_entropy, batch.batch_median, r.reward})
        line += ',' + format_double(v);
      line += r.truncated ? ",1\n" : ",0\n";
      *out_ << line;
    }
  }
}

MetricsWriter::MetricsWriter(std::ostream& out) : out_(&out) {
  *out_ << "step,reward,reward_nontruncated,truncated_fraction,mean_length,student_entropy,"
           "teacher_entropy,batch_median,g,lambda,warmup,u_member,u_nonmember,rolling_reward\n";
}

void MetricsWriter::write(const StepMetrics& m) {
  std::string line = std::to_string(m.step);
  for (double v : {m.reward, m.reward_nontruncated, m.truncated_fraction, m.mean_length,
                   m.student_entropy, m.teacher_entropy, m.batch_median})
    line += ',' + format_double(v);
  line += ',' + std::to_string(m.g) + ',' + format_double(m.lambda);
  line += m.warmup ? ",1" : ",0";
  for (double v : {m.u_member, m.u_nonmember, m.rolling_reward}) line += ',' + format_double(v);
  *out_ << line << '\n';
}

// ---------------------------------------------------------------- checkpoint

namespace {

json gate_to_json(const GateState& g) {
  return {{"g", g.g},
          {"h_warm", hex_bits(g.h_warm)},
          {"tau_down", hex_bits(g.tau_down)},
          {"lambda_max", hex_bits(g.lambda_max)},
          {"multiplier", hex_bits(g.multiplier)},
          {"calibrated", g.calibrated},
          {"enabled", g.enabled},
          {"signal_source", std::string(to_string(g.signal_source))},
          {"warmup_medians", hex_vector(g.warmup_medians)},
          {"calibrated_at_step", g.calibrated_at_step}};
}

GateState gate_from_json(const json& j) {
  GateState g;
  g.g = j.at("g").get<int>();
  g.h_warm = from_hex_bits(j.at("h_warm"));
  g.tau_down = from_hex_bits(j.at("tau_down"));
  g.lambda_max = from_hex_bits(j.at("lambda_max"));
  g.multiplier = from_hex_bits(j.at("multiplier"));
  g.calibrated = j.at("calibrated").get<bool>();
  g.enabled = j.at("enabled").get<bool>();
  g.signal_source = gate_signal_from_string(j.at("signal_source").get<std::string>());
  g.warmup_medians = from_hex_vector(j.at("warmup_medians"));
  g.calibrated_at_step = j.at("calibrated_at_step").get<long>();
  return g;
}

json policy_to_json(const Policy& p) {
  const Vector flat = p.flat();
  return {{"vocab_size", p.vocab_size()},
          {"context_order", p.context_order()},
          {"shared_tokens", p.shared_tokens()},
          {"side_open", p.side_open()},
          {"side_close", p.side_close()},
          {"step", p.step()},
          {"params", hex_vector(std::vector<double>(flat.begin(), flat.end()))}};
}

Policy policy_from_json(const json& j) {
  Policy p(j.at("vocab_size").get<int>(), j.at("context_order").get<int>(),
           j.at("shared_tokens").get<std::uint64_t>(), j.at("side_open").get<Token>(),
           j.at("side_close").get<Token>());
  const std::vector<double> v = from_hex_vector(j.at("params"));
  if (static_cast<Eigen::Index>(v.size()) != p.parameter_count())
    throw std::invalid_argument("checkpoint: parameter count does not match the policy shape");
  p.set_flat(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  p.set_step(j.at("step").get<std::int64_t>());
  return p;
}

}  // namespace

json Checkpoint::to_json() const {
  return {{"format", "antisd-checkpoint"},
          {"version", 1},
          {"config", config.to_json()},
          {"config_hash", config_hash},
          {"step", step},
          {"arm_start_step", arm_start_step},
          {"optimizer", {{"kind", "sgd"}}},
          {"rng", {{"kind", "counter-streams"}, {"seed", config.seed}, {"next_step", step + 1}}},
          {"cursor", cursor},
          {"order", order},
          {"reward_history", hex_vector(reward_history)},
          {"gate", gate_to_json(gate)},
          {"policy", policy_to_json(policy)}};
}

Checkpoint Checkpoint::from_json(const json& j) {
  try {
    if (j.at("format") != "antisd-checkpoint" || j.at("version") != 1)
      throw std::invalid_argument("not a version-1 checkpoint");
    Checkpoint c;
    c.config = TrainConfig::from_json(j.at("config"));
    c.config_hash = j.at("config_hash").get<std::string>();
    if (c.config_hash != c.config.structural_hash())
      throw std::invalid_argument("config hash does not match the stored config");
    c.step = j.at("step").get<long>();
    c.arm_start_step = j.at("arm_start_step").get<long>();
    c.cursor = j.at("cursor").get<std::size_t>();
    c.order = j.at("order").get<std::vector<std::size_t>>();
    c.reward_history = from_hex_vector(j.at("reward_history"));
    c.gate = gate_from_json(j.at("gate"));
    c.policy = policy_from_json(j.at("policy"));
    return c;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint: ") + e.what());
  }
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << to_json().dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("checkpoint " + path + " is not valid JSON");
  return from_json(j);
}

// ---------------------------------------------------------------- report

json RunReport::to_json() const {
  const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json steps = json::array();
  for (const auto& m : metrics)
    steps.push_back({{"step", m.step},
                     {"reward", m.reward},
                     {"reward_nontruncated", m.reward_nontruncated},
                     {"truncated_fraction", m.truncated_fraction},
                     {"mean_length", m.mean_length},
                     {"student_entropy", m.student_entropy},
                     {"teacher_entropy", m.teacher_entropy},
                     {"batch_median", m.batch_median},
                     {"g", m.g},
                     {"lambda", m.lambda},
                     {"warmup", m.warmup},
                     {"u_member", m.u_member},
                     {"u_nonmember", m.u_nonmember},
                     {"rolling_reward", num(m.rolling_reward)}});
  return {{"config", config.to_json()},
          {"start_step", start_step},
          {"final_step", final_step},
          {"best_rolling", num(best_rolling)},
          {"best_rolling_step", best_rolling_step},
          {"final_rolling", num(final_rolling)},
          {"h_warm", h_warm},
          {"tau_down", tau_down},
          {"recalibrated", recalibrated},
          {"eval", {{"avg_at_k", eval.avg_at_k},
                    {"pass_at_k", eval.pass_at_k},
                    {"k", eval.k},
                    {"problems", eval.problems}}},
          {"metrics", steps}};
}

std::vector<double> rolling_mean(const std::vector<double>& values, int window) {
  if (window < 1) throw std::invalid_argument("rolling_mean: window must be >= 1");
  std::vector<double> out(values.size(), std::numeric_limits<double>::quiet_NaN());
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t i = w - 1; i < values.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i + 1 - w; j <= i; ++j) s += values[j];
    out[i] = s / static_cast<double>(w);
  }
  return out;
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  task_ = Task(cfg_.task);
  policy_ = make_policy(cfg_.task, cfg_.context_order, cfg_.shared_bos);
  Engine demo_rng = make_engine(stream_seed(cfg_.seed, 0x9e7a));
  pretrain(policy_, task_, cfg_.pretrain, demo_rng);
  order_.resize(task_.problems().size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Engine order_rng = make_engine(stream_seed(cfg_.seed, 0x0de5));
  for (std::size_t i = order_.size(); i > 1; --i)
    std::swap(order_[i - 1], order_[uniform_below(order_rng, i)]);
  gate_ = fresh_gate();
}

Trainer::Trainer(const Checkpoint& ckpt, const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.structural_hash() != ckpt.config_hash)
    throw std::invalid_argument("config hash mismatch: checkpoint " + ckpt.config_hash +
                                ", config " + cfg_.structural_hash());
  task_ = Task(cfg_.task);
  policy_ = ckpt.policy;
  step_ = ckpt.step;
  cursor_ = ckpt.cursor;
  order_ = ckpt.order;
  rewards_ = ckpt.reward_history;
  if (order_.size() != task_.problems().size() || cursor_ >= order_.size())
    throw std::invalid_argument("checkpoint: dataset order does not fit the task");
  if (same_arm(ckpt.config, cfg_)) {
    gate_ = ckpt.gate;
    arm_start_step_ = ckpt.arm_start_step;
  } else {
    gate_ = fresh_gate();
    arm_start_step_ = step_;
    recalibrated_ = true;
  }
}

GateState Trainer::fresh_gate() const {
  GateState g;
  g.lambda_max = cfg_.lambda_max;
  g.multiplier = cfg_.gate_multiplier;
  g.enabled = cfg_.gate_enabled;
  g.signal_source = cfg_.gate_signal_source;
  return g;
}

std::vector<std::size_t> Trainer::next_problems() {
  std::vector<std::size_t> out;
  for (int b = 0; b < cfg_.batch_prompts; ++b) {
    out.push_back(order_[cursor_]);
    cursor_ = (cursor_ + 1) % order_.size();
  }
  return out;
}

StepMetrics Trainer::train_step(const Hooks& hooks) {
  const long s = step_ + 1;
  StepBatch batch = collect_batch(policy_, task_, cfg_, s, next_problems());

  std::vector<std::vector<TokenScore>> scores;
  scores.reserve(batch.rollouts.size());
  for (const auto& r : batch.rollouts) scores.push_back(r.scores);
  batch.batch_median = batch_entropy_median(scores, cfg_.gate_signal_source);

  double lambda = 0.0;
  if (!gate_.calibrated) {
    batch.warmup = true;
    gate_.warmup_medians.push_back(batch.batch_median);
    if (static_cast<int>(gate_.warmup_medians.size()) >= cfg_.warmup_steps) {
      GateState cal = calibrate(gate_.warmup_medians, cfg_.gate_multiplier);
      cal.lambda_max = gate_.lambda_max;
      cal.enabled = gate_.enabled;
      cal.signal_source = gate_.signal_source;
      cal.calibrated_at_step = s;
      gate_ = cal;
    }
    batch.g = 0;
  } else if (cfg_.gate_forced_closed) {
    batch.g = 0;
  } else {
    const GateStep gs = gate_step(gate_, batch.batch_median);
    gate_ = gs.state;
    lambda = gs.lambda;
    batch.g = gate_.enabled ? gate_.g : 1;
  }
  assign_advantages(batch, lambda, cfg_.compose_mode);
  apply_update(policy_, batch, cfg_.learning_rate, cfg_.clip_ratio);
  step_ = s;
  policy_.set_step(s);

  StepMetrics m;
  m.step = s;
  m.g = batch.g;
  m.lambda = lambda;
  m.warmup = batch.warmup;
  m.batch_median = batch.batch_median;
  double nontrunc = 0.0, tokens = 0.0, members = 0.0, nonmembers = 0.0;
  for (const auto& r : batch.rollouts) {
    m.reward += r.reward;
    if (!r.truncated) {
      m.reward_nontruncated += r.reward;
      nontrunc += 1.0;
    }
    m.truncated_fraction += r.truncated ? 1.0 : 0.0;
    m.mean_length += static_cast<double>(r.tokens.size());
    for (const auto& ts : r.scores) {
      m.student_entropy += ts.student_entropy;
      m.teacher_entropy += ts.teacher_entropy;
      tokens += 1.0;
      const auto& sol = r.privileged.solution;
      if (std::find(sol.begin(), sol.end(), ts.token) != sol.end()) {
        m.u_member += ts.u;
        members += 1.0;
      } else {
        m.u_nonmember += ts.u;
        nonmembers += 1.0;
      }
    }
  }
  const auto n = static_cast<double>(batch.rollouts.size());
  m.reward /= n;
  m.reward_nontruncated = nontrunc > 0.0 ? m.reward_nontruncated / nontrunc : 0.0;
  m.truncated_fraction /= n;
  m.mean_length /= n;
  m.student_entropy /= tokens;
  m.teacher_entropy /= tokens;
  m.u_member = members > 0.0 ? m.u_member / members : 0.0;
  m.u_nonmember = nonmembers > 0.0 ? m.u_nonmember / nonmembers : 0.0;
  rewards_.push_back(m.reward);
  m.rolling_reward = std::numeric_limits<double>::quiet_NaN();
  if (rewards_.size() >= static_cast<std::size_t>(cfg_.rolling_window))
    m.rolling_reward =
        std::accumulate(rewards_.end() - cfg_.rolling_window, rewards_.end(), 0.0) /
        cfg_.rolling_window;

  if (hooks.trace) hooks.trace->write(batch, cfg_.compose_mode);
  if (hooks.metrics) hooks.metrics->write(m);
  if (hooks.on_checkpoint && cfg_.checkpoint_every > 0 && s % cfg_.checkpoint_every == 0)
    hooks.on_checkpoint(checkpoint());
  return m;
}

GateState Trainer::warmup_and_calibrate(const Hooks& hooks) {
  while (!gate_.calibrated) train_step(hooks);
  return gate_;
}

RunReport Trainer::run(const Hooks& hooks) {
  RunReport rep;
  rep.start_step = step_;
  rep.recalibrated = recalibrated_;
  while (step_ < cfg_.steps) rep.metrics.push_back(train_step(hooks));
  rep.config = cfg_;
  rep.final_step = step_;
  rep.h_warm = gate_.h_warm;
  rep.tau_down = gate_.tau_down;
  const std::vector<double> roll = rolling_mean(rewards_, cfg_.rolling_window);
  rep.best_rolling = std::numeric_limits<double>::quiet_NaN();
  for (long s = rep.start_step + 1; s <= step_; ++s) {
    const double v = roll[static_cast<std::size_t>(s - 1)];
    if (std::isfinite(v) && !(v <= rep.best_rolling)) {
      rep.best_rolling = v;
      rep.best_rolling_step = s;
    }
  }
  rep.final_rolling = roll.empty() ? std::numeric_limits<double>::quiet_NaN() : roll.back();
  rep.eval = evaluate(cfg_.eval_k);
  if (hooks.on_checkpoint) hooks.on_checkpoint(checkpoint());
  return rep;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = cfg_;
  c.policy = policy_;
  c.gate = gate_;
  c.step = step_;
  c.arm_start_step = arm_start_step_;
  c.cursor = cursor_;
  c.order = order_;
  c.reward_history = rewards_;
  c.config_hash = cfg_.structural_hash();
  return c;
}

EvalResult Trainer::evaluate(int k) const {
  return antisd::evaluate(policy_, task_, k, cfg_.max_len, cfg_.seed);
}

TraceSummary trace_policy(const Checkpoint& ckpt, int count, std::uint64_t seed,
                          TraceWriter* writer) {
  if (count < 1) throw std::invalid_argument("trace: count must be >= 1");
  TrainConfig cfg = ckpt.config;
  cfg.seed = seed;
  const Task task(cfg.task);
  std::vector<std::size_t> problems;
  for (int i = 0; i < count; ++i)
    problems.push_back(ckpt.order.at(static_cast<std::size_t>(i) % ckpt.order.size()));
  // Step label 0 keeps trace streams apart from every training step.
  StepBatch batch = collect_batch(ckpt.policy, task, cfg, 0, problems);
  std::vector<std::vector<TokenScore>> scores;
  for (const auto& r : batch.rollouts) scores.push_back(r.scores);
  batch.batch_median = batch_entropy_median(scores, cfg.gate_signal_source);
  const bool live = ckpt.gate.calibrated && !cfg.gate_forced_closed;
  batch.g = live ? (ckpt.gate.enabled ? ckpt.gate.g : 1) : 0;
  assign_advantages(batch, batch.g * cfg.lambda_max, cfg.compose_mode);
  if (writer) writer->write(batch, cfg.compose_mode);

  TraceSummary sum;
  for (const auto& r : batch.rollouts) {
    for (const auto& ts : r.scores) {
      const auto& sol = r.privileged.solution;
      if (std::find(sol.begin(), sol.end(), ts.token) != sol.end()) {
        sum.u_member += ts.u;
        ++sum.member_tokens;
      } else {
        sum.u_nonmember += ts.u;
        ++sum.nonmember_tokens;
      }
    }
  }
  if (sum.member_tokens) sum.u_member /= static_cast<double>(sum.member_tokens);
  if (sum.nonmember_tokens) sum.u_nonmember /= static_cast<double>(sum.nonmember_tokens);
  return sum;
}

}  // namespace antisd
