#include "antisd/pmi_signal.hpp"

#include <stdexcept>
#include <string>

namespace antisd {

std::string_view to_string(SignalMode m) {
  switch (m) {
    case SignalMode::sd_reverse_kl_descent:
      return "sd_reverse_kl_descent";
    case SignalMode::reverse_kl_ascent:
      return "reverse_kl_ascent";
    case SignalMode::jsd_ascent:
      return "jsd_ascent";
    case SignalMode::no_teacher:
      return "no_teacher";
  }
  return "jsd_ascent";
}

SignalMode signal_mode_from_string(std::string_view s) {
  for (auto m : {SignalMode::sd_reverse_kl_descent, SignalMode::reverse_kl_ascent,
                 SignalMode::jsd_ascent, SignalMode::no_teacher})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown signal_mode '" + std::string(s) + "'");
}

TokenSeq enriched_context(std::span<const Token> prompt, std::span<const Token> privileged,
                          std::span<const Token> prefix) {
  TokenSeq ctx;
  ctx.reserve(prompt.size() + privileged.size() + prefix.size());
  ctx.insert(ctx.end(), prompt.begin(), prompt.end());
  ctx.insert(ctx.end(), privileged.begin(), privileged.end());
  ctx.insert(ctx.end(), prefix.begin(), prefix.end());
  return ctx;
}

}  // namespace antisd
