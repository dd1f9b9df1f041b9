// antisd: train / trace / gradcheck / calibrate.
//
// Exit codes: 0 ok, 1 usage or config error, 2 check failure, 3 runtime error.

#include "antisd/oracle.hpp"
#include "antisd/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace antisd;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kCheckFailed = 2;
constexpr int kRuntime = 3;

// Config problems exit 1; everything after the config is settled exits 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string resume_path;
  std::string out_dir = "antisd_out";
  std::optional<std::uint64_t> seed;
};

fs::path output_dir(const Common& c) {
  const char* env = std::getenv("ANTISD_OUT");
  fs::path dir = env && *env ? fs::path(env) : fs::path(c.out_dir);
  fs::create_directories(dir);
  return dir;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw UsageError(path + " is not valid JSON");
  return j;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

// Fresh runs: --seed sets both the run seed and the task seed. On resume the
// task is fixed by the checkpoint, so only the run seed moves.
TrainConfig resolve_config(const Common& c, const std::optional<Checkpoint>& ckpt) {
  try {
    TrainConfig cfg;
    if (!c.config_path.empty())
      cfg = TrainConfig::from_json(read_json(c.config_path));
    else if (ckpt)
      cfg = ckpt->config;
    if (c.seed) {
      cfg.seed = *c.seed;
      if (!ckpt) cfg.task.seed = *c.seed;
    }
    std::optional<long> base;
    if (ckpt) base = ckpt->step;
    for (const auto& s : c.sets) apply_override(cfg, s, base);
    cfg.validate();
    return cfg;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

std::optional<Checkpoint> load_checkpoint(const std::string& path) {
  if (path.empty()) return std::nullopt;
  try {
    return Checkpoint::load(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void add_common(CLI::App* sub, Common& c, bool with_resume) {
  sub->add_option("--config", c.config_path, "JSON config mirroring TrainConfig");
  sub->add_option("--set", c.sets, "KEY=VALUE override (repeatable)")->take_all();
  if (with_resume) sub->add_option("--resume", c.resume_path, "checkpoint to resume from");
  sub->add_option("--out", c.out_dir, "output directory (ANTISD_OUT wins)");
  sub->add_option("--seed", c.seed, "run seed");
}

int cmd_train(const Common& c) {
  const auto ckpt = load_checkpoint(c.resume_path);
  const TrainConfig cfg = resolve_config(c, ckpt);
  Trainer trainer = [&] {
    if (!ckpt) return Trainer(cfg);
    try {
      return Trainer(*ckpt, cfg);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }();
  const fs::path dir = output_dir(c);
  auto cfg_out = open_out(dir / "config.json");
  cfg_out << cfg.to_json().dump(2) << '\n';
  auto trace_out = open_out(dir / "trace.csv");
  auto metrics_out = open_out(dir / "metrics.csv");
  TraceWriter trace(trace_out);
  MetricsWriter metrics(metrics_out);
  TrainHooks hooks{&trace, &metrics, [&](const Checkpoint& k) {
                     char name[40];
                     std::snprintf(name, sizeof name, "checkpoint_step%06ld.json", k.step);
                     k.save((dir / name).string());
                     k.save((dir / "checkpoint.json").string());
                   }};
  const RunReport rep = trainer.run(hooks);
  auto rep_out = open_out(dir / "report.json");
  rep_out << rep.to_json().dump(2) << '\n';
  std::cout << json{{"out", dir.string()},
                    {"start_step", rep.start_step},
                    {"final_step", rep.final_step},
                    {"recalibrated", rep.recalibrated},
                    {"best_rolling", std::isfinite(rep.best_rolling) ? json(rep.best_rolling)
                                                                    : json(nullptr)},
                    {"avg_at_k", rep.eval.avg_at_k},
                    {"pass_at_k", rep.eval.pass_at_k}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_trace(const Common& c, int count, const std::string& problems_path) {
  auto ckpt = load_checkpoint(c.resume_path);
  if (!ckpt) {
    // No checkpoint: trace the initial (pretrained per config) policy.
    ckpt = Trainer(resolve_config(c, std::nullopt)).checkpoint();
  } else if (!c.sets.empty() || !c.config_path.empty()) {
    throw UsageError("trace: --config/--set apply only without a checkpoint");
  }
  if (!problems_path.empty()) {
    const Task given = [&] {
      try {
        return Task::from_json(read_json(problems_path));
      } catch (const UsageError&) {
        throw;
      } catch (const std::exception& e) {
        throw UsageError(e.what());
      }
    }();
    if (!(given.config() == ckpt->config.task))
      throw UsageError("trace: problem set does not match the checkpoint's task");
  }
  const fs::path dir = output_dir(c);
  auto out = open_out(dir / "trace.csv");
  TraceWriter writer(out);
  const TraceSummary s = trace_policy(*ckpt, count, c.seed.value_or(ckpt->config.seed), &writer);
  std::cout << json{{"trace", (dir / "trace.csv").string()},
                    {"u_member_mean", s.u_member},
                    {"u_nonmember_mean", s.u_nonmember},
                    {"member_tokens", s.member_tokens},
                    {"nonmember_tokens", s.nonmember_tokens},
                    {"member_above_nonmember", s.u_member > s.u_nonmember}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_gradcheck(int trials, std::uint64_t seed) {
  const auto results = gradcheck_suite(trials, seed);
  json report = json::array();
  bool ok = true;
  for (const auto& r : results) {
    report.push_back({{"check", r.name},
                      {"max_error", r.max_error},
                      {"tolerance", r.tolerance},
                      {"trials", r.trials},
                      {"passed", r.passed}});
    if (!r.passed) {
      ok = false;
      std::cerr << "check failed: " << r.name << " (max error " << r.max_error << " > "
                << r.tolerance << ")\n";
    }
  }
  std::cout << json{{"checks", report}, {"passed", ok}}.dump(2) << '\n';
  return ok ? kOk : kCheckFailed;
}

int cmd_calibrate(const Common& c) {
  const TrainConfig cfg = resolve_config(c, std::nullopt);
  Trainer trainer(cfg);
  const GateState g = trainer.warmup_and_calibrate();
  std::cout << json{{"h_warm", g.h_warm},
                    {"tau_down", g.tau_down},
                    {"multiplier", g.multiplier},
                    {"warmup_medians", g.warmup_medians},
                    {"calibrated_at_step", g.calibrated_at_step}}
                   .dump()
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anti-self-distillation on a tabular toy policy"};
  app.require_subcommand(1);

  Common train_opts, trace_opts, cal_opts;
  auto* train = app.add_subcommand("train", "run training and write trace, metrics, report");
  add_common(train, train_opts, true);

  auto* trace = app.add_subcommand("trace", "score sampled rollouts and summarize u");
  add_common(trace, trace_opts, true);
  int count = 16;
  std::string problems_path;
  trace->add_option("--count", count, "prompts to sample (G rollouts each)")->check(CLI::PositiveNumber);
  trace->add_option("--problems", problems_path, "task JSON that must match the checkpoint");

  auto* gradcheck = app.add_subcommand("gradcheck", "run the oracle checks");
  int trials = 100;
  std::uint64_t gc_seed = 1;
  gradcheck->add_option("--trials", trials, "random trials per check")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", gc_seed, "seed for the random trials");

  auto* calibrate = app.add_subcommand("calibrate", "run warmup only and print the thresholds");
  add_common(calibrate, cal_opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(train_opts);
    if (*trace) return cmd_trace(trace_opts, count, problems_path);
    if (*gradcheck) return cmd_gradcheck(trials, gc_seed);
    if (*calibrate) return cmd_calibrate(cal_opts);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
