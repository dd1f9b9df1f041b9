#include "antisd/entropy_gate.hpp"
#include "gen.hpp"

#include <doctest.h>

using namespace antisd;

namespace {
GateState armed(int g) {
  GateState s = calibrate({0.4, 0.42, 0.38, 0.41, 0.40}, 0.93);
  s.g = g;
  s.lambda_max = 0.5;
  return s;
}

std::vector<std::vector<TokenScore>> teacher_entropies(std::vector<double> h) {
  std::vector<std::vector<TokenScore>> out(1);
  for (double v : h) {
    TokenScore t;
    t.teacher_entropy = v;
    t.student_entropy = 2 * v;
    out[0].push_back(t);
  }
  return out;
}
}  // namespace

TEST_CASE("calibrate") {
  const auto s = calibrate({0.4, 0.42, 0.38, 0.41, 0.40}, 0.93);
  CHECK(s.h_warm == 0.40);
  CHECK(s.tau_down == 0.93 * 0.40);
  CHECK(s.tau_down == doctest::Approx(0.372));
  CHECK(s.g == 1);
  const auto one = calibrate({1.0}, 0.5);
  CHECK(one.h_warm == 1.0);
  CHECK(one.tau_down == 0.5);
  CHECK_THROWS_AS(calibrate({}, 0.93), std::invalid_argument);
  CHECK_THROWS_AS(calibrate({1.0}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(calibrate({1.0}, 0.0), std::invalid_argument);
}

TEST_CASE("transition table") {
  auto step = [](int g, double h) { return gate_step(armed(g), h); };
  CHECK(step(1, 0.38).state.g == 1);
  CHECK(step(1, 0.38).lambda == 0.5);
  CHECK(step(1, 0.36).state.g == 0);
  CHECK(step(1, 0.36).lambda == 0.0);
  CHECK(step(0, 0.39).state.g == 0);
  CHECK(step(0, 0.39).lambda == 0.0);
  CHECK(step(0, 0.40).state.g == 1);
  CHECK(step(0, 0.40).lambda == 0.5);
  // edges: h == tau_down holds open, h >= h_warm from open stays open
  CHECK(step(1, 0.93 * 0.40).state.g == 1);
  CHECK(step(1, 5.0).state.g == 1);
  CHECK(step(0, 0.0).state.g == 0);
}

TEST_CASE("gate errors") {
  CHECK_THROWS_AS(gate_step(GateState{}, 0.5), std::logic_error);
  CHECK_THROWS_AS(gate_step(armed(1), -0.1), std::invalid_argument);
  CHECK_THROWS_AS(gate_step(armed(1), std::nan("")), std::invalid_argument);
}

TEST_CASE("disabled gate always passes lambda_max") {
  GateState s = armed(0);
  s.enabled = false;
  for (double h : {0.0, 0.1, 0.39, 10.0}) CHECK(gate_step(s, h).lambda == 0.5);
}

TEST_CASE("property: oscillation inside the band never switches") {
  auto rng = gen::stream(30);
  for (int g0 : {0, 1}) {
    GateState s = armed(g0);
    int changes = 0;
    for (int i = 0; i < 1000; ++i) {
      const double h = gen::real(rng, s.tau_down, s.h_warm);
      if (h == s.tau_down) continue;
      const auto next = gate_step(s, h);
      changes += next.state.g != s.g;
      s = next.state;
    }
    CHECK(changes == 0);
  }
}

TEST_CASE("property: lambda is g times lambda_max") {
  auto rng = gen::stream(31);
  GateState s = armed(1);
  for (int i = 0; i < 1000; ++i) {
    const auto next = gate_step(s, gen::real(rng, 0.0, 0.6));
    CHECK(next.lambda == next.state.g * s.lambda_max);
    // opening needs h_warm, closing needs < tau_down
    s = next.state;
  }
}

TEST_CASE("median and batch median") {
  CHECK(median({0.1, 0.5, 0.9}) == 0.5);
  CHECK(median({0.8, 0.2, 0.6, 0.4}) == doctest::Approx(0.5));
  CHECK(median({0.3, 0.3, 0.3}) == 0.3);
  CHECK_THROWS_AS(median({}), std::invalid_argument);
  CHECK(batch_entropy_median(teacher_entropies({0.1, 0.5, 0.9})) == 0.5);
  CHECK(batch_entropy_median(teacher_entropies({0.1, 0.5, 0.9}), GateSignal::student_entropy) ==
        1.0);
  CHECK_THROWS_AS(batch_entropy_median({}), std::invalid_argument);
  CHECK(gate_signal_from_string(to_string(GateSignal::student_entropy)) ==
        GateSignal::student_entropy);
}
