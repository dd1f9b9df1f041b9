#pragma once

// Log-space categorical distributions, the JSD advantage shape and the
// divergence primitives shared by every other module.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace antisd {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Vector = VectorX<double>;
using Matrix = Eigen::MatrixXd;

/// Lower clamp applied to every log-probability. Keeps |t - s| <= 60.
inline constexpr double kLogProbFloor = -30.0;

template <typename Scalar>
Scalar softplus(Scalar u) {
  using std::exp;
  using std::log1p;
  if (u > Scalar(30)) return u + log1p(exp(-u));
  if (u < Scalar(-30)) return log1p(exp(u));
  // max(u,0) + log1p(exp(-|u|)) is exact in the middle range as well.
  return (u > Scalar(0) ? u : Scalar(0)) + log1p(exp(-std::abs(u)));
}

/// phi(u) = (softplus(u) - log 2) / 2. Strictly increasing, phi(0) = 0,
/// bounded below by -log(2)/2.
template <typename Scalar>
Scalar phi(Scalar u) {
  return Scalar(0.5) * (softplus(u) - Scalar(std::numbers::ln2));
}

template <typename Scalar>
Scalar sigmoid(Scalar u) {
  using std::exp;
  if (u >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-u));
  const Scalar e = exp(u);
  return e / (Scalar(1) + e);
}

/// Derivative of the JSD generator f(r) = r/2 log(2r/(1+r)) + 1/2 log(2/(1+r)).
template <typename Scalar>
Scalar fprime_jsd(Scalar r) {
  using std::log;
  using std::log1p;
  if (!(r > Scalar(0))) throw std::domain_error("fprime_jsd: ratio must be positive");
  // log(2r/(1+r)) = log 2 - log1p(1/r), stable for large and small r.
  return Scalar(0.5) * (Scalar(std::numbers::ln2) - log1p(Scalar(1) / r));
}

/// The JSD generator itself, used by the f-divergence form of jsd().
template <typename Scalar>
Scalar f_jsd(Scalar r) {
  using std::log;
  using std::log1p;
  if (r < Scalar(0)) throw std::domain_error("f_jsd: ratio must be nonnegative");
  const Scalar ln2 = Scalar(std::numbers::ln2);
  const Scalar tail = Scalar(0.5) * (ln2 - log1p(r));
  if (r == Scalar(0)) return tail;
  return Scalar(0.5) * r * (ln2 - log1p(Scalar(1) / r)) + tail;
}

template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(static_cast<double>(m))) return m;
  return m + std::log((x.array() - m).exp().sum());
}

/// A normalized next-token distribution held as log-probabilities.
template <typename Scalar>
class BasicCategorical {
 public:
  BasicCategorical() = default;

  /// Normalizes raw logits, then clamps at kLogProbFloor. The clamp can move
  /// the total mass off 1 by at most V*e^-30, after which the row is
  /// renormalized once so logsumexp stays at 0.
  static BasicCategorical from_logits(const VectorX<Scalar>& logits) {
    if (logits.size() == 0) throw std::invalid_argument("Categorical: empty logits");
    if (!logits.allFinite()) throw std::invalid_argument("Categorical: non-finite logits");
    VectorX<Scalar> lp = logits.array() - logsumexp(logits);
    if (lp.minCoeff() < Scalar(kLogProbFloor)) {
      lp = lp.cwiseMax(Scalar(kLogProbFloor));
      lp.array() -= logsumexp(lp);
      lp = lp.cwiseMax(Scalar(kLogProbFloor)).cwiseMin(Scalar(0));
    }
    BasicCategorical c;
    c.log_probs_ = std::move(lp);
    return c;
  }

  static BasicCategorical from_probs(const VectorX<Scalar>& probs) {
    if (probs.size() == 0) throw std::invalid_argument("Categorical: empty probabilities");
    if ((probs.array() < Scalar(0)).any() || !probs.allFinite())
      throw std::invalid_argument("Categorical: probabilities must be finite and nonnegative");
    const Scalar floor_p = std::exp(Scalar(kLogProbFloor));
    VectorX<Scalar> lp = probs.unaryExpr([&](Scalar p) {
      return p > floor_p ? Scalar(std::log(p)) : Scalar(kLogProbFloor);
    });
    return from_logits(lp);
  }

  static BasicCategorical uniform(Eigen::Index size) {
    return from_logits(VectorX<Scalar>::Zero(size));
  }

  Eigen::Index size() const { return log_probs_.size(); }
  const VectorX<Scalar>& log_probs() const { return log_probs_; }
  Scalar log_prob(Eigen::Index v) const { return log_probs_(v); }
  VectorX<Scalar> probs() const { return log_probs_.array().exp(); }

 private:
  VectorX<Scalar> log_probs_;
};

using Categorical = BasicCategorical<double>;

namespace detail {
template <typename Scalar>
void require_same_size(const BasicCategorical<Scalar>& p, const BasicCategorical<Scalar>& q,
                       const char* op) {
  if (p.size() != q.size())
    throw std::invalid_argument(std::string(op) + ": vocabulary size mismatch (" +
                                std::to_string(p.size()) + " vs " + std::to_string(q.size()) +
                                ")");
}
}  // namespace detail

/// KL(p || q) in nats.
template <typename Scalar>
Scalar kl(const BasicCategorical<Scalar>& p, const BasicCategorical<Scalar>& q) {
  detail::require_same_size(p, q, "kl");
  const Scalar v = (p.probs().array() * (p.log_probs() - q.log_probs()).array()).sum();
  return v < Scalar(0) ? Scalar(0) : v;
}

/// Symmetric Jensen-Shannon divergence, 0.5 KL(p||m) + 0.5 KL(q||m).
template <typename Scalar>
Scalar jsd(const BasicCategorical<Scalar>& p, const BasicCategorical<Scalar>& q) {
  detail::require_same_size(p, q, "jsd");
  const VectorX<Scalar> pp = p.probs();
  const VectorX<Scalar> qq = q.probs();
  Scalar total(0);
  for (Eigen::Index v = 0; v < p.size(); ++v) {
    // log m = log((p+q)/2), evaluated from the log inputs.
    const Scalar a = p.log_prob(v), b = q.log_prob(v);
    const Scalar hi = a > b ? a : b;
    const Scalar log_m =
        hi + std::log(std::exp(a - hi) + std::exp(b - hi)) - Scalar(std::numbers::ln2);
    total += Scalar(0.5) * (pp(v) * (a - log_m) + qq(v) * (b - log_m));
  }
  return total < Scalar(0) ? Scalar(0) : total;
}

/// Same divergence through its f-divergence form E_{v~q}[f(p(v)/q(v))].
template <typename Scalar>
Scalar jsd_fdiv(const BasicCategorical<Scalar>& p, const BasicCategorical<Scalar>& q) {
  detail::require_same_size(p, q, "jsd_fdiv");
  Scalar total(0);
  for (Eigen::Index v = 0; v < p.size(); ++v) {
    const Scalar r = std::exp(p.log_prob(v) - q.log_prob(v));
    total += std::exp(q.log_prob(v)) * f_jsd(r);
  }
  return total;
}

template <typename Scalar>
Scalar entropy(const BasicCategorical<Scalar>& p) {
  const Scalar h = -(p.probs().array() * p.log_probs().array()).sum();
  return h < Scalar(0) ? Scalar(0) : h;
}

}  // namespace antisd
