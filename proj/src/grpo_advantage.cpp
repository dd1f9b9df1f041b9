#include "antisd/grpo_advantage.hpp"

#include <stdexcept>

namespace antisd {

std::string_view to_string(ComposeMode m) {
  return m == ComposeMode::multiplicative ? "multiplicative" : "additive";
}

ComposeMode compose_mode_from_string(std::string_view s) {
  if (s == "additive") return ComposeMode::additive;
  if (s == "multiplicative") return ComposeMode::multiplicative;
  throw std::invalid_argument("unknown compose_mode '" + std::string(s) + "'");
}

void GroupBatch::validate() const {
  const auto g = rollouts.size();
  if (g < 2) throw std::invalid_argument("GroupBatch: group size must be >= 2");
  if (rewards.size() != g || truncated.size() != g || (!scores.empty() && scores.size() != g))
    throw std::invalid_argument("GroupBatch: parallel lists differ in length");
  for (double r : rewards)
    if (!std::isfinite(r)) throw std::invalid_argument("GroupBatch: non-finite reward");
}

std::vector<double> seq_advantage(const std::vector<double>& rewards) {
  const Eigen::Map<const Vector> r(rewards.data(), static_cast<Eigen::Index>(rewards.size()));
  const Vector a = seq_advantage(r);
  return {a.data(), a.data() + a.size()};
}

}  // namespace antisd
