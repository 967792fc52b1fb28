// SPDX-License-Identifier: Apache-2.0
#include "selectkd/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace selectkd {

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  // Rejection to kill modulo bias; the loop terminates almost immediately.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

Scalar Rng::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  // u1 in (0,1] so the log is finite.
  const Scalar u1 = 1.0 - uniform();
  const Scalar u2 = uniform();
  const Scalar r = std::sqrt(-2.0 * std::log(u1));
  const Scalar theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_normal_ = true;
  return r * std::cos(theta);
}

Scalar Rng::gamma(Scalar shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be > 0");
  if (shape < 1.0) {
    // Boost trick: Gamma(a) = Gamma(a+1) * U^{1/a}.
    const Scalar u = 1.0 - uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const Scalar d = shape - 1.0 / 3.0;
  const Scalar c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    Scalar x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const Scalar u = 1.0 - uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

Vec Rng::dirichlet(Scalar concentration, Index dim) {
  if (dim < 1) throw std::invalid_argument("dirichlet: dim must be >= 1");
  Vec g(dim);
  for (Index i = 0; i < dim; ++i) g[i] = gamma(concentration);
  const Scalar total = g.sum();
  if (total <= 0.0) {
    // All gammas underflowed (extremely small concentration); fall back to a
    // one-hot draw, which is the distribution's limit.
    Vec p = Vec::Zero(dim);
    p[static_cast<Index>(uniform_index(static_cast<std::uint64_t>(dim)))] = 1.0;
    return p;
  }
  return g / total;
}

}  // namespace selectkd
