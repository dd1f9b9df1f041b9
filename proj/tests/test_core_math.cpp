#include "antisd/core_math.hpp"
#include "gen.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace antisd;

TEST_CASE("softplus and phi fixed points") {
  CHECK(softplus(0.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(phi(0.0) == doctest::Approx(0.0));
  CHECK(std::abs(phi(0.0)) <= 1e-15);
  // large arguments stay finite and close to the asymptotes
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(phi(-800.0) == doctest::Approx(-0.5 * std::numbers::ln2));
}

TEST_CASE("phi derivative at zero is one quarter") {
  const double h = 1e-5;
  CHECK(std::abs((phi(h) - phi(-h)) / (2 * h) - 0.25) <= 1e-6);
}

TEST_CASE("fprime_jsd(exp(-u)) = -phi(u) on a grid") {
  for (int i = 0; i <= 2000; ++i) {
    const double u = -40.0 + 80.0 * i / 2000.0;
    CHECK(std::abs(fprime_jsd(std::exp(-u)) + phi(u)) <= 1e-12);
    CHECK(phi(u) >= -0.5 * std::numbers::ln2 - 1e-12);
  }
}

TEST_CASE("fprime_jsd rejects nonpositive ratios") {
  CHECK_THROWS_AS(fprime_jsd(0.0), std::domain_error);
  CHECK_THROWS_AS(fprime_jsd(-1.0), std::domain_error);
}

TEST_CASE("phi is strictly increasing") {
  auto rng = gen::stream(1);
  for (int i = 0; i < 500; ++i) {
    const double a = gen::real(rng, -30, 30), b = a + gen::real(rng, 1e-3, 5);
    CHECK(phi(a) < phi(b));
  }
}

TEST_CASE("categorical from logits") {
  const auto u = Categorical::uniform(4);
  for (int v = 0; v < 4; ++v) CHECK(u.log_prob(v) == doctest::Approx(-std::log(4.0)));
  CHECK_THROWS_AS(Categorical::from_logits(Vector()), std::invalid_argument);
  Vector bad(2);
  bad << 0.0, std::nan("");
  CHECK_THROWS_AS(Categorical::from_logits(bad), std::invalid_argument);

  Vector spiky(3);
  spiky << 0.0, -100.0, -200.0;
  const auto c = Categorical::from_logits(spiky);
  CHECK(c.log_probs().minCoeff() >= kLogProbFloor);
  CHECK(std::abs(logsumexp(c.log_probs())) <= 1e-12);
}

TEST_CASE("property: categoricals normalize and respect the floor") {
  auto rng = gen::stream(2);
  for (int i = 0; i < 200; ++i) {
    const auto c = gen::categorical(rng, gen::integer(rng, 2, 20), gen::real(rng, 0.1, 60));
    CHECK(std::abs(c.probs().sum() - 1.0) <= 1e-12);
    CHECK(c.log_probs().minCoeff() >= kLogProbFloor);
    CHECK(c.log_probs().maxCoeff() <= 0.0);
  }
}

TEST_CASE("divergences") {
  auto rng = gen::stream(3);
  for (int i = 0; i < 200; ++i) {
    const int n = gen::integer(rng, 2, 10);
    const auto p = gen::categorical(rng, n), q = gen::categorical(rng, n);
    CHECK(kl(p, q) >= 0.0);
    CHECK(kl(p, p) <= 1e-14);
    const double j = jsd(p, q);
    CHECK(j >= 0.0);
    CHECK(j <= std::numbers::ln2 + 1e-12);
    CHECK(j == doctest::Approx(jsd(q, p)).epsilon(1e-12));
    CHECK(j == doctest::Approx(jsd_fdiv(p, q)).epsilon(1e-9));
    CHECK(entropy(p) <= std::log(static_cast<double>(n)) + 1e-12);
  }
  CHECK_THROWS_AS(kl(Categorical::uniform(2), Categorical::uniform(3)), std::invalid_argument);
  CHECK_THROWS_AS(jsd(Categorical::uniform(2), Categorical::uniform(3)), std::invalid_argument);
}

TEST_CASE("templated on scalar: long double agrees with double") {
  CHECK(static_cast<double>(phi(1.5L)) == doctest::Approx(phi(1.5)).epsilon(1e-15));
  CHECK(static_cast<double>(softplus(-3.0L)) == doctest::Approx(softplus(-3.0)).epsilon(1e-15));
}

TEST_CASE("reference values") {
  CHECK(std::abs(softplus(100.0) - 100.0) <= 1e-12);
  CHECK(softplus(1.0) == doctest::Approx(1.3132617).epsilon(1e-7));
  CHECK(std::abs(phi(-40.0) + 0.3465736) <= 1e-7);
  CHECK(std::abs((phi(1e-6) - phi(-1e-6)) / 2e-6 - 0.25) <= 1e-6);
  CHECK(fprime_jsd(1.0) == 0.0);
  CHECK(std::abs(fprime_jsd(std::exp(-2.0)) + phi(2.0)) <= 1e-12);
  CHECK(std::abs(fprime_jsd(std::exp(3.0)) + phi(-3.0)) <= 1e-12);

  Vector p(2);
  p << 0.9, 0.1;
  CHECK(kl(Categorical::uniform(2), Categorical::from_probs(p)) ==
        doctest::Approx(0.5108256).epsilon(1e-7));
  Vector a(2), b(2);
  a << 1.0, 0.0;
  b << 0.0, 1.0;
  CHECK(jsd(Categorical::from_probs(a), Categorical::from_probs(b)) ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-9));
  CHECK(entropy(Categorical::uniform(4)) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(entropy(Categorical::from_probs(a)) < 1e-6);
  Vector h(3);
  h << 0.5, 0.25, 0.25;
  CHECK(entropy(Categorical::from_probs(h)) == doctest::Approx(1.0397208).epsilon(1e-7));
}
