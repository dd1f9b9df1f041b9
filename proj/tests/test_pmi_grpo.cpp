#include "antisd/grpo_advantage.hpp"
#include "antisd/oracle.hpp"
#include "antisd/pmi_signal.hpp"
#include "gen.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace antisd;

TEST_CASE("empty privileged context gives u = 0") {
  auto rng = gen::stream(20);
  Policy p(8, 2, 1, 3, 4);
  gen::randomize(p, rng);
  const auto scores = score_rollout(p, TokenSeq{0, 7}, TokenSeq{}, TokenSeq{2, 5, 1});
  REQUIRE(scores.size() == 3);
  for (const auto& s : scores) {
    CHECK(s.u == 0.0);
    CHECK(s.s == s.t);
  }
  CHECK(scores[1].position == 1);
  CHECK(scores[1].token == 5);
}

TEST_CASE("score_rollout errors carry the position") {
  Policy p(8, 2);
  CHECK_THROWS_AS(score_rollout(p, TokenSeq{0}, TokenSeq{}, TokenSeq{}), std::invalid_argument);
  try {
    score_rollout(p, TokenSeq{0}, TokenSeq{}, TokenSeq{1, 2, 42});
    FAIL("expected an error");
  } catch (const std::out_of_range& e) {
    CHECK(std::string(e.what()).find("position 2") != std::string::npos);
  }
}

TEST_CASE("u matches enumerated PMI on an exact joint") {
  auto rng = gen::stream(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto joint = ExactJoint::random(3, 2, 2, 3, rng);
    const int x = gen::integer(rng, 0, 1);
    const TokenSeq c = gen::tokens(rng, 3, 2, 2), y = gen::tokens(rng, 3, 3, 3);
    TokenSeq priv{joint.marker()};
    priv.insert(priv.end(), c.begin(), c.end());
    const auto scores = score_rollout(joint, TokenSeq{x}, priv, y);
    for (int t = 0; t < 3; ++t) {
      const auto [lhs, rhs] = exact_pmi(joint, x, c, y, t);
      CHECK(std::abs(scores[static_cast<std::size_t>(t)].u - lhs) <= 1e-10);
      CHECK(std::abs(lhs - rhs) <= 1e-10);
    }
  }
}

TEST_CASE("delta reference values") {
  CHECK(delta(2.0, SignalMode::sd_reverse_kl_descent, 0.0) == 2.0);
  CHECK(delta(2.0, SignalMode::reverse_kl_ascent, 0.0) == -2.0);
  CHECK(delta(0.0, SignalMode::jsd_ascent, 0.0) == 0.0);
  CHECK(std::abs(delta(-40.0, SignalMode::jsd_ascent, 0.0) - 0.3465736) <= 1e-6);
  // no teacher: u = -s
  CHECK(delta(123.0, SignalMode::no_teacher, -1.5) == doctest::Approx(-phi(1.5)));
}

TEST_CASE("property: jsd delta is capped on the positive side and sign-flipped") {
  auto rng = gen::stream(22);
  for (int i = 0; i < 1000; ++i) {
    const double u = gen::real(rng, -60, 60);
    const double d = delta(u, SignalMode::jsd_ascent, 0.0);
    CHECK(d <= 0.5 * std::numbers::ln2);
    if (u > 0) CHECK(d < 0);
    if (u < 0) CHECK(d > 0);
  }
}

TEST_CASE("mode names round-trip") {
  for (auto m : {SignalMode::sd_reverse_kl_descent, SignalMode::reverse_kl_ascent,
                 SignalMode::jsd_ascent, SignalMode::no_teacher})
    CHECK(signal_mode_from_string(to_string(m)) == m);
  for (auto m : {ComposeMode::additive, ComposeMode::multiplicative})
    CHECK(compose_mode_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(signal_mode_from_string("forward_kl"), std::invalid_argument);
  CHECK_THROWS_AS(compose_mode_from_string(""), std::invalid_argument);
}

TEST_CASE("seq_advantage reference values") {
  CHECK(seq_advantage(std::vector<double>{1, 1, 0, 0}) == std::vector<double>{1, 1, -1, -1});
  CHECK(seq_advantage(std::vector<double>{1, 1, 1, 1}) == std::vector<double>{0, 0, 0, 0});
  const auto a = seq_advantage(std::vector<double>{1, 0, 0, 0});
  CHECK(std::abs(a[0] - 1.7320508) <= 1e-6);
  for (int i = 1; i < 4; ++i) CHECK(std::abs(a[static_cast<std::size_t>(i)] + 0.5773503) <= 1e-6);
  CHECK_THROWS_AS(seq_advantage(std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("property: advantages are centred with unit population variance") {
  auto rng = gen::stream(23);
  for (int i = 0; i < 500; ++i) {
    const auto r = gen::rewards(rng, gen::integer(rng, 2, 16));
    const auto a = seq_advantage(r);
    double sum = 0, sq = 0;
    for (double v : a) sum += v, sq += v * v;
    CHECK(std::abs(sum) <= 1e-9);
    const bool degenerate = std::all_of(r.begin(), r.end(), [&](double v) { return v == r[0]; });
    if (degenerate)
      CHECK(sq == 0.0);
    else
      CHECK(sq / static_cast<double>(a.size()) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("compose") {
  CHECK(compose(1.0, 0.2, 0.5, ComposeMode::additive) == doctest::Approx(1.1));
  CHECK(compose(0.0, 0.3, 0.5, ComposeMode::multiplicative) == 0.0);
  auto rng = gen::stream(24);
  for (int i = 0; i < 200; ++i) {
    const double a = gen::real(rng, -3, 3), d = gen::real(rng, -3, 3);
    CHECK(compose(a, d, 0.0, ComposeMode::additive) == a);
    CHECK(compose(a, d, 0.0, ComposeMode::multiplicative) == a);
  }
}

TEST_CASE("GroupBatch validation") {
  GroupBatch g;
  g.rollouts = {{1}, {1}};
  g.rewards = {0, 1};
  g.truncated = {false, false};
  CHECK_NOTHROW(g.validate());
  g.rewards.pop_back();
  CHECK_THROWS(g.validate());
  GroupBatch one;
  one.rollouts = {{1}};
  one.rewards = {0};
  one.truncated = {false};
  CHECK_THROWS(one.validate());
}
