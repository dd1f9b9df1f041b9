#pragma once

// Two-threshold (Schmitt) gate on the batch-median teacher entropy.
//
//   g <- 1  if g == 0 and H >= h_warm
//   g <- 0  if g == 1 and H <  tau_down
//   lambda = g * lambda_max

#include "antisd/pmi_signal.hpp"

#include <string_view>
#include <vector>

namespace antisd {

enum class GateSignal { teacher_entropy, student_entropy };

std::string_view to_string(GateSignal s);
GateSignal gate_signal_from_string(std::string_view s);

struct GateState {
  int g = 1;
  double h_warm = 0.0;
  double tau_down = 0.0;
  double lambda_max = 0.0;
  double multiplier = 0.93;
  bool calibrated = false;
  bool enabled = true;
  GateSignal signal_source = GateSignal::teacher_entropy;
  // Where the thresholds came from: the warmup medians and the step they ended on.
  std::vector<double> warmup_medians;
  long calibrated_at_step = 0;

  friend bool operator==(const GateState&, const GateState&) = default;
};

/// Median with the midpoint rule for even counts. Throws on empty input.
double median(std::vector<double> values);

/// h_warm = median(warmup_medians), tau_down = multiplier * h_warm, g = 1.
/// Only the threshold fields are set; the caller carries lambda_max,
/// enabled and signal_source over.
GateState calibrate(const std::vector<double>& warmup_medians, double multiplier);

struct GateStep {
  GateState state;
  double lambda = 0.0;
};

GateStep gate_step(const GateState& state, double h);

/// Pooled median over every token of every rollout in the step.
double batch_entropy_median(const std::vector<std::vector<TokenScore>>& scores,
                            GateSignal source = GateSignal::teacher_entropy);

}  // namespace antisd
