#include "antisd/entropy_gate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace antisd {

std::string_view to_string(GateSignal s) {
  return s == GateSignal::student_entropy ? "student_entropy" : "teacher_entropy";
}

GateSignal gate_signal_from_string(std::string_view s) {
  if (s == "teacher_entropy") return GateSignal::teacher_entropy;
  if (s == "student_entropy") return GateSignal::student_entropy;
  throw std::invalid_argument("unknown gate_signal_source '" + std::string(s) + "'");
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty list");
  const auto n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

GateState calibrate(const std::vector<double>& warmup_medians, double multiplier) {
  if (warmup_medians.empty()) throw std::invalid_argument("calibrate: no warmup medians");
  if (!(multiplier > 0.0 && multiplier < 1.0))
    throw std::invalid_argument("calibrate: multiplier must lie in (0, 1)");
  GateState s;
  s.h_warm = median(warmup_medians);
  s.tau_down = multiplier * s.h_warm;
  s.multiplier = multiplier;
  s.g = 1;
  s.calibrated = true;
  s.warmup_medians = warmup_medians;
  return s;
}

GateStep gate_step(const GateState& state, double h) {
  if (!state.calibrated) throw std::logic_error("gate_step: gate is not calibrated");
  if (!std::isfinite(h) || h < 0.0)
    throw std::invalid_argument("gate_step: entropy must be finite and nonnegative");
  GateStep out{state, state.lambda_max};
  if (!state.enabled) return out;
  if (state.g == 0 && h >= state.h_warm)
    out.state.g = 1;
  else if (state.g == 1 && h < state.tau_down)
    out.state.g = 0;
  out.lambda = out.state.g * state.lambda_max;
  return out;
}

double batch_entropy_median(const std::vector<std::vector<TokenScore>>& scores,
                            GateSignal source) {
  std::vector<double> pooled;
  for (const auto& seq : scores)
    for (const auto& ts : seq)
      pooled.push_back(source == GateSignal::teacher_entropy ? ts.teacher_entropy
                                                             : ts.student_entropy);
  if (pooled.empty()) throw std::invalid_argument("batch_entropy_median: empty batch");
  return median(std::move(pooled));
}

}  // namespace antisd
