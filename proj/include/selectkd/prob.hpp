// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "selectkd/rng.hpp"
#include "selectkd/types.hpp"

namespace selectkd {

/// log(sum_i exp(z_i)), evaluated with max-subtraction.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& z) {
  using S = typename Derived::Scalar;
  const S zmax = z.maxCoeff();
  S acc = S(0);
  for (Index i = 0; i < z.size(); ++i) acc += std::exp(z[i] - zmax);
  return zmax + std::log(acc);
}

/// Vector of unnormalized log-odds over a vocabulary. Finite entries only.
class LogitVector {
 public:
  explicit LogitVector(Vec values);

  Index size() const { return values_.size(); }
  const Vec& values() const { return values_; }
  Scalar operator[](Index i) const { return values_[i]; }

 private:
  Vec values_;
};

/// Categorical distribution over a vocabulary: entries >= 0, sum within
/// 1e-9 of 1. Stored as given, never renormalized.
class ProbVector {
 public:
  explicit ProbVector(Vec probs);
  static ProbVector uniform(Index vocab_size);

  Index size() const { return probs_.size(); }
  const Vec& probs() const { return probs_; }
  Scalar operator[](Index i) const { return probs_[i]; }

 private:
  Vec probs_;
};

/// Shift-invariant softmax via max-subtraction.
ProbVector softmax(const LogitVector& z);

/// log(softmax(z)) computed directly (z - max - logsumexp), not via the
/// probabilities, so entries stay accurate far into the tail.
Vec log_softmax(const LogitVector& z);

/// The k most probable token ids, in rank order. Ties break toward the
/// lower token index.
std::vector<TokenId> top_k_set(const ProbVector& p, int k);

/// Hellinger distance, (1/sqrt(2)) * || sqrt(p) - sqrt(q) ||_2, in [0, 1].
Scalar hellinger(const ProbVector& p, const ProbVector& q);

/// Inverse-CDF draw; consumes exactly one uniform from rng.
TokenId sample(const ProbVector& p, Rng& rng);

/// Shannon entropy in nats (probabilities clamped at kProbFloor).
Scalar entropy(const ProbVector& p);

/// Total variation distance, half the L1 difference.
Scalar tv_distance(const ProbVector& p, const ProbVector& q);

}  // namespace selectkd
