// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
//
// Criteria 7-11 train four arms for 300 steps on each of five seeds; the
// shared runs are done once and reused.

#include "antisd/core_math.hpp"
#include "antisd/entropy_gate.hpp"
#include "antisd/oracle.hpp"
#include "antisd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

using namespace antisd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int n, bool pass, const std::string& detail) {
  std::printf("Criterion %d: %s  %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void shape_identities() {
  const auto t0 = Clock::now();
  double worst_id = 0.0, worst_bound = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const double u = -40.0 + 80.0 * i / 10000.0;
    worst_id = std::max(worst_id, std::abs(fprime_jsd(std::exp(-u)) + phi(u)));
    worst_bound = std::min(worst_bound, phi(u) + 0.5 * std::numbers::ln2);
  }
  const double slope = (phi(1e-6) - phi(-1e-6)) / 2e-6;
  const double secs = seconds_since(t0);
  report(1, worst_id <= 1e-12 && worst_bound >= -1e-12 && std::abs(slope - 0.25) <= 1e-6 && secs < 1,
         fmt("max|f'(e^-u)+phi(u)|=%.2e min(phi+ln2/2)=%.2e phi'(0)=%.9f %.3fs", worst_id,
             worst_bound, slope, secs));
}

void oracle_checks() {
  const auto t0 = Clock::now();
  const auto results = gradcheck_suite(100, 1);
  const double secs = seconds_since(t0);
  std::map<std::string, CheckResult> by;
  for (const auto& r : results) by[r.name] = r;
  auto line = [&](int n, std::vector<std::string> names, double limit_s) {
    bool pass = secs < limit_s;
    std::string detail;
    for (const auto& name : names) {
      const auto& r = by.at(name);
      pass = pass && r.passed && r.trials == 100;
      detail += fmt("%s max=%.2e tol=%.0e; ", name.c_str(), r.max_error, r.tolerance);
    }
    report(n, pass, detail + fmt("suite %.2fs", secs));
  };
  line(2, {"reverse_kl_estimator_vs_fd"}, 10);
  line(3, {"jsd_estimator_vs_fd"}, 10);
  line(4, {"pmi_two_sides", "telescoping_sum", "potential_increments"}, 10);
}

void gate_semantics() {
  GateState s = calibrate({0.4, 0.42, 0.38, 0.41, 0.40}, 0.93);
  s.lambda_max = 0.5;
  struct Row {
    int g;
    double h;
    int g_next;
  };
  const Row table[] = {
      {0, 0.40, 1}, {0, 0.50, 1},   // opens at h_warm
      {0, 0.39, 0}, {0, 0.10, 0},   // stays closed below h_warm
      {1, 0.36, 0}, {1, 0.00, 0},   // closes below tau_down
      {1, 0.38, 1}, {1, s.tau_down, 1},  // stays open at or above tau_down
      {1, 0.90, 1},
  };
  bool table_ok = true;
  for (const auto& r : table) {
    GateState in = s;
    in.g = r.g;
    const auto out = gate_step(in, r.h);
    table_ok = table_ok && out.state.g == r.g_next && out.lambda == r.g_next * 0.5;
  }
  int changes = 0;
  for (int g0 : {0, 1}) {
    GateState st = s;
    st.g = g0;
    for (int i = 0; i < 1000; ++i) {
      const double h = s.tau_down + (s.h_warm - s.tau_down) * (0.05 + 0.9 * ((i * 37) % 100) / 100.0);
      const auto next = gate_step(st, h);
      changes += next.state.g != st.g;
      st = next.state;
    }
  }
  const bool exact = s.tau_down == 0.93 * s.h_warm && TrainConfig{}.gate_multiplier == 0.93;
  report(5, table_ok && changes == 0 && exact,
         fmt("table %s, oscillation changes=%d, tau_down=%.17g h_warm=%.17g", table_ok ? "ok" : "bad",
             changes, s.tau_down, s.h_warm));
}

std::string trace_bytes(const TrainConfig& cfg, int steps) {
  Trainer t(cfg);
  std::ostringstream out;
  TraceWriter w(out);
  TrainHooks hooks{&w, nullptr, {}};
  for (int i = 0; i < steps; ++i) t.train_step(hooks);
  return out.str();
}

void lambda_zero_equivalence() {
  TrainConfig anti = antisd_arm(TrainConfig{});
  anti.gate_forced_closed = true;
  const std::string a = trace_bytes(anti, 50), g = trace_bytes(grpo_arm(TrainConfig{}), 50);
  report(6, a == g, fmt("trace bytes %zu vs %zu, %s", a.size(), g.size(), a == g ? "identical" : "differ"));
}

struct ArmRun {
  RunReport report;
  std::vector<double> rolling;  // over the full reward history
  Checkpoint final;
};

ArmRun run_arm(const TrainConfig& cfg) {
  Trainer t(cfg);
  ArmRun r;
  r.report = t.run();
  r.rolling = rolling_mean(t.reward_history(), cfg.rolling_window);
  r.final = t.checkpoint();
  return r;
}

// First step (1-based) whose rolling mean reaches `target`, or -1.
long first_reaching(const std::vector<double>& rolling, double target, long from = 0) {
  for (std::size_t i = static_cast<std::size_t>(from); i < rolling.size(); ++i)
    if (std::isfinite(rolling[i]) && rolling[i] >= target) return static_cast<long>(i) + 1;
  return -1;
}

void training_criteria() {
  const auto t0 = Clock::now();
  constexpr int kSeeds = 5;
  int c7 = 0, c8 = 0, c9 = 0, c10 = 0, c11 = 0;
  std::string d7, d8, d9, d10, d11;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    TrainConfig base;
    base.seed = static_cast<std::uint64_t>(seed);
    base.task.seed = static_cast<std::uint64_t>(seed);
    const ArmRun grpo = run_arm(grpo_arm(base));
    const ArmRun anti = run_arm(antisd_arm(base));
    const ArmRun sd = run_arm(sd_arm(base));
    const ArmRun none = run_arm(no_teacher_arm(base));

    // 7: AntiSD reaches GRPO's best rolling reward in at most half GRPO's steps.
    const double g_best = grpo.report.best_rolling;
    const long g_step = grpo.report.best_rolling_step;
    const long a_reach = first_reaching(anti.rolling, g_best);
    const bool p7 = a_reach > 0 && a_reach <= 0.5 * static_cast<double>(g_step);
    c7 += p7;
    d7 += fmt(" s%d:%ld/%ld", seed, a_reach, g_step);

    // 8: SD's final rolling reward does not beat GRPO's.
    const bool p8 = sd.report.final_rolling <= grpo.report.final_rolling;
    c8 += p8;
    d8 += fmt(" s%d:%.3f<=%.3f", seed, sd.report.final_rolling, grpo.report.final_rolling);

    // 9: no-teacher rolling reward falls >= 20% below its peak before step 300.
    double peak = -1.0, low = 0.0;
    std::size_t peak_at = 0;
    for (std::size_t i = 0; i < none.rolling.size(); ++i)
      if (std::isfinite(none.rolling[i]) && none.rolling[i] > peak) peak = none.rolling[i], peak_at = i;
    low = peak;
    for (std::size_t i = peak_at; i < none.rolling.size(); ++i) low = std::min(low, none.rolling[i]);
    const bool p9 = peak > 0.0 && low <= 0.8 * peak;
    c9 += p9;
    d9 += fmt(" s%d:%.3f->%.3f", seed, peak, low);

    // 10: member tokens carry larger u than non-member tokens after AntiSD.
    const TraceSummary ts = trace_policy(anti.final, 16, base.seed, nullptr);
    const bool p10 = ts.u_member > ts.u_nonmember;
    c10 += p10;
    d10 += fmt(" s%d:%.3f>%.3f", seed, ts.u_member, ts.u_nonmember);

    // 11: resume GRPO at its best step with AntiSD; budget is half of
    // scratch AntiSD's steps to its own best.
    const double a_best = anti.report.best_rolling;
    const long a_step = anti.report.best_rolling_step;
    const long budget = a_step / 2;
    Trainer g(grpo_arm(base));
    while (g.step() < g_step) g.train_step();
    TrainConfig cont = antisd_arm(base);
    cont.steps = static_cast<int>(g_step + budget);
    Trainer resumed(g.checkpoint(), cont);
    const RunReport rr = resumed.run();
    const std::vector<double> roll = rolling_mean(resumed.reward_history(), cont.rolling_window);
    const long reach = first_reaching(roll, 0.95 * a_best, g_step);
    const bool p11 = resumed.recalibrated() && budget > 0 && reach > 0;
    c11 += p11;
    d11 += fmt(" s%d:%s %.3f/%.3f in %ld", seed, p11 ? "y" : "n", rr.best_rolling, a_best, budget);
  }
  const double secs = seconds_since(t0);
  report(7, c7 >= 4 && secs < 600, fmt("%d/5 (reach/grpo_best_step)%s", c7, d7.c_str()));
  report(8, c8 >= 4, fmt("%d/5 (sd<=grpo final)%s", c8, d8.c_str()));
  report(9, c9 >= 4, fmt("%d/5 (peak->low)%s", c9, d9.c_str()));
  report(10, c10 >= 4, fmt("%d/5 (u member>nonmember)%s", c10, d10.c_str()));
  report(11, c11 >= 3, fmt("%d/5 (resumed best/scratch best in budget)%s, %.0fs", c11, d11.c_str(), secs));
}

}  // namespace

int main() {
  shape_identities();
  oracle_checks();
  gate_semantics();
  lambda_zero_equivalence();
  training_criteria();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
