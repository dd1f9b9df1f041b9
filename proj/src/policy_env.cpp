#include "antisd/policy_env.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace antisd {

std::string_view to_string(TaskName t) {
  return t == TaskName::multi_root ? "multi_root" : "keyed_recall";
}

TaskName task_name_from_string(std::string_view s) {
  if (s == "keyed_recall") return TaskName::keyed_recall;
  if (s == "multi_root") return TaskName::multi_root;
  throw std::invalid_argument("unknown task name '" + std::string(s) + "'");
}

std::string_view to_string(PrivilegedSource s) {
  switch (s) {
    case PrivilegedSource::group_rollout:
      return "group_rollout";
    case PrivilegedSource::dataset_reference:
      return "dataset_reference";
    case PrivilegedSource::none:
      return "none";
  }
  return "none";
}

Task::Task(const TaskConfig& cfg) : cfg_(cfg) {
  const int d = digits();
  if (d < 2) throw std::invalid_argument("task: vocab_size must leave at least 2 digit tokens");
  if (cfg.key_length < 1 || cfg.key_length > 4)
    throw std::invalid_argument("task: key_length must be in [1, 4]");
  if (cfg.solution_length < 1) throw std::invalid_argument("task: solution_length must be >= 1");
  if (!(cfg.structure >= 0.0 && cfg.structure <= 1.0))
    throw std::invalid_argument("task: structure must be in [0, 1]");
  if (cfg.name == TaskName::multi_root && (cfg.roots < 1 || cfg.roots > d))
    throw std::invalid_argument("task: roots must be in [1, digits]");

  Engine rng = make_engine(stream_seed(cfg.seed, 0x7a5c));
  g_.resize(static_cast<std::size_t>(d));
  std::iota(g_.begin(), g_.end(), 0);
  for (int i = d - 1; i > 0; --i)
    std::swap(g_[static_cast<std::size_t>(i)],
              g_[uniform_below(rng, static_cast<std::uint64_t>(i) + 1)]);
  std::vector<int> by_last(static_cast<std::size_t>(d));
  for (int& m : by_last) m = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(d)));

  std::size_t count = 1;
  for (int i = 0; i < cfg.key_length; ++i) count *= static_cast<std::size_t>(d);
  problems_.reserve(count);
  const int roots = cfg.name == TaskName::multi_root ? cfg.roots : 1;
  for (std::size_t key = 0; key < count; ++key) {
    Problem p;
    p.prompt.assign(static_cast<std::size_t>(cfg.key_length) + 1, tok::BOS);
    std::size_t rest = key;
    for (int i = cfg.key_length; i >= 1; --i) {
      p.prompt[static_cast<std::size_t>(i)] = tok::D0 + static_cast<Token>(rest % d);
      rest /= static_cast<std::size_t>(d);
    }
    const int last = p.prompt.back() - tok::D0;
    int m = uniform01(rng) < cfg.structure
                ? by_last[static_cast<std::size_t>(last)]
                : static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(d)));
    for (int r = 0; r < roots; ++r) {
      while (std::find(p.derivations.begin(), p.derivations.end(), m) != p.derivations.end())
        m = (m + 1) % d;
      p.derivations.push_back(m);
      p.solutions.push_back(solution_from(m));
      m = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(d)));
    }
    problems_.push_back(std::move(p));
  }
}

TokenSeq Task::solution_from(int m) const {
  const int d = digits();
  TokenSeq s(static_cast<std::size_t>(cfg_.solution_length));
  for (int j = 0; j < cfg_.solution_length; ++j)
    s[static_cast<std::size_t>(j)] = tok::D0 + g_[static_cast<std::size_t>((m + j) % d)];
  return s;
}

const Problem& Task::problem_for(std::span<const Token> prompt) const {
  if (prompt.size() != static_cast<std::size_t>(cfg_.key_length) + 1 || prompt[0] != tok::BOS)
    throw std::invalid_argument("prompt is not BOS followed by a key");
  std::size_t key = 0;
  for (std::size_t i = 1; i < prompt.size(); ++i) {
    const int digit = prompt[i] - tok::D0;
    if (digit < 0 || digit >= digits()) throw std::invalid_argument("prompt key is not a digit");
    key = key * static_cast<std::size_t>(digits()) + static_cast<std::size_t>(digit);
  }
  return problems_.at(key);
}

nlohmann::json Task::to_json() const {
  nlohmann::json j;
  j["name"] = std::string(to_string(cfg_.name));
  j["vocab_size"] = cfg_.vocab_size;
  j["key_length"] = cfg_.key_length;
  j["solution_length"] = cfg_.solution_length;
  j["seed"] = cfg_.seed;
  j["structure"] = cfg_.structure;
  j["roots"] = cfg_.roots;
  j["permutation"] = g_;
  auto& arr = j["problems"] = nlohmann::json::array();
  for (const auto& p : problems_)
    arr.push_back({{"prompt", p.prompt}, {"solutions", p.solutions},
                   {"derivations", p.derivations}});
  return j;
}

Task Task::from_json(const nlohmann::json& j) {
  TaskConfig cfg;
  cfg.name = task_name_from_string(j.at("name").get<std::string>());
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.key_length = j.at("key_length").get<int>();
  cfg.solution_length = j.at("solution_length").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.structure = j.at("structure").get<double>();
  cfg.roots = j.at("roots").get<int>();
  Task t(cfg);
  // The generator is the source of truth; a stored set that disagrees was
  // produced by a different generator version.
  if (j.contains("problems") && j.at("problems") != t.to_json().at("problems"))
    throw std::invalid_argument("task: stored problem set does not match its seed");
  return t;
}

std::optional<TokenSeq> answer_segment(std::span<const Token> rollout) {
  if (rollout.empty() || rollout.back() != tok::EOS) return std::nullopt;
  const auto ans = std::find(rollout.begin(), rollout.end(), tok::ANS);
  if (ans == rollout.end()) return std::nullopt;
  return TokenSeq(ans + 1, rollout.end() - 1);
}

double verify(const Task& task, std::span<const Token> prompt, std::span<const Token> rollout) {
  const auto seg = answer_segment(rollout);
  if (!seg) return 0.0;
  const Problem& p = task.problem_for(prompt);
  return std::find(p.solutions.begin(), p.solutions.end(), *seg) != p.solutions.end() ? 1.0
                                                                                       : 0.0;
}

PrivilegedContext build_privileged(const GroupBatch& group, const Task& task,
                                   std::span<const Token> prompt, std::size_t scored,
                                   bool no_teacher) {
  if (scored >= group.rewards.size())
    throw std::out_of_range("build_privileged: rollout index " + std::to_string(scored));
  PrivilegedContext pc;
  if (no_teacher) return pc;
  for (std::size_t i = 0; i < group.rewards.size(); ++i) {
    if (group.rewards[i] != 1.0) continue;
    // reward 1 implies a well-formed answer segment
    pc.solution = *answer_segment(group.rollouts[i]);
    pc.source = PrivilegedSource::group_rollout;
    break;
  }
  if (pc.source == PrivilegedSource::none) {
    pc.solution = task.problem_for(prompt).solutions.front();
    pc.source = PrivilegedSource::dataset_reference;
  }
  pc.tokens.push_back(tok::SOL);
  pc.tokens.insert(pc.tokens.end(), pc.solution.begin(), pc.solution.end());
  pc.tokens.push_back(tok::FB);
  pc.tokens.push_back(group.rewards[scored] == 1.0 ? tok::OK : tok::NO);
  return pc;
}

Policy make_policy(const TaskConfig& task, int context_order, bool shared_bos) {
  return Policy(task.vocab_size, context_order, shared_bos ? std::uint64_t{1} << tok::BOS : 0,
                tok::SOL, tok::FB);
}

void pretrain(Policy& policy, const Task& task, const PretrainConfig& cfg, Engine& rng) {
  if (cfg.steps < 0 || !(cfg.learning_rate >= 0.0))
    throw std::invalid_argument("pretrain: steps and learning_rate must be nonnegative");
  const auto d = static_cast<std::uint64_t>(task.digits());
  const auto n = static_cast<std::uint64_t>(task.problems().size());
  const auto random_digit = [&] { return static_cast<int>(uniform_below(rng, d)); };
  for (int it = 0; it < cfg.steps; ++it) {
    const Problem& p = task.problem(uniform_below(rng, n));
    const std::size_t root = uniform_below(rng, p.solutions.size());
    TokenSeq ctx = p.prompt;
    TokenSeq target;
    if (uniform01(rng) < cfg.open_book) {
      const Token fb = uniform01(rng) < 0.5 ? tok::OK : tok::NO;
      ctx.push_back(tok::SOL);
      ctx.insert(ctx.end(), p.solutions[root].begin(), p.solutions[root].end());
      ctx.push_back(tok::FB);
      ctx.push_back(fb);
      target.push_back(tok::ANS);
      target.insert(target.end(), p.solutions[root].begin(), p.solutions[root].end());
    } else if (uniform01(rng) < cfg.shortcut) {
      target.push_back(tok::ANS);
      if (uniform01(rng) < cfg.shortcut_accuracy) {
        target.insert(target.end(), p.solutions[root].begin(), p.solutions[root].end());
      } else {
        for (int j = 0; j < task.config().solution_length; ++j)
          target.push_back(tok::D0 + random_digit());
      }
    } else {
      const int m = uniform01(rng) < cfg.derivation_accuracy ? p.derivations[root] : random_digit();
      target.push_back(tok::D0 + m);
      target.push_back(tok::ANS);
      const TokenSeq sol = task.solution_from(m);
      target.insert(target.end(), sol.begin(), sol.end());
    }
    target.push_back(tok::EOS);
    for (Token t : target) {
      policy.apply(policy.grad_log_prob(ctx, t), cfg.learning_rate);
      ctx.push_back(t);
    }
  }
}

}  // namespace antisd
