// SPDX-License-Identifier: Apache-2.0
#include "selectkd/prob.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>

namespace selectkd {

LogitVector::LogitVector(Vec values) : values_(std::move(values)) {
  if (values_.size() < 2)
    throw std::invalid_argument("LogitVector: vocab_size must be >= 2");
  if (!values_.allFinite())
    throw std::invalid_argument("LogitVector: entries must be finite");
}

ProbVector::ProbVector(Vec probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2)
    throw std::invalid_argument("ProbVector: vocab_size must be >= 2");
  if (!probs_.allFinite() || (probs_.array() < 0.0).any())
    throw std::invalid_argument("ProbVector: entries must be finite and >= 0");
  const Scalar total = probs_.sum();
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("ProbVector: entries must sum to 1 within 1e-9");
}

ProbVector ProbVector::uniform(Index vocab_size) {
  return ProbVector(Vec::Constant(vocab_size, 1.0 / static_cast<Scalar>(vocab_size)));
}

ProbVector softmax(const LogitVector& z) {
  const Vec& v = z.values();
  Vec e = (v.array() - v.maxCoeff()).exp().matrix();
  return ProbVector(e / e.sum());
}

Vec log_softmax(const LogitVector& z) {
  const Vec& v = z.values();
  return (v.array() - log_sum_exp(v)).matrix();
}

std::vector<TokenId> top_k_set(const ProbVector& p, int k) {
  const Index n = p.size();
  if (k < 1 || k > n)
    throw std::invalid_argument("top_k_set: k must be in [1, vocab_size]");
  std::vector<TokenId> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), TokenId{0});
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(),
                    [&p](TokenId a, TokenId b) {
                      if (p[a] != p[b]) return p[a] > p[b];
                      return a < b;
                    });
  ids.resize(static_cast<std::size_t>(k));
  return ids;
}

Scalar hellinger(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("hellinger: size mismatch");
  const Scalar d =
      std::numbers::sqrt2 / 2.0 *
      (p.probs().array().sqrt() - q.probs().array().sqrt()).matrix().norm();
  return std::clamp(d, 0.0, 1.0);
}

TokenId sample(const ProbVector& p, Rng& rng) {
  const Scalar u = rng.uniform();
  Scalar cum = 0.0;
  const Index n = p.size();
  for (Index i = 0; i < n; ++i) {
    cum += p[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  // u landed beyond the accumulated mass (sum slightly below 1): emit the
  // last token with nonzero probability.
  for (Index i = n - 1; i >= 0; --i)
    if (p[i] > 0.0) return static_cast<TokenId>(i);
  return static_cast<TokenId>(n - 1);
}

Scalar entropy(const ProbVector& p) {
  return -(p.probs().array() * p.probs().array().max(kProbFloor).log()).sum();
}

Scalar tv_distance(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("tv_distance: size mismatch");
  return 0.5 * (p.probs() - q.probs()).lpNorm<1>();
}

}  // namespace selectkd
