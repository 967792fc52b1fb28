// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>

#include "selectkd/types.hpp"

namespace selectkd {

/// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a),
/// a > 0, x >= 0. Series for x < a+1, Lentz continued fraction otherwise.
Scalar gamma_q(Scalar a, Scalar x);

/// Survival function of the chi-square distribution with dof degrees of
/// freedom: P(X >= stat).
Scalar chi_square_sf(Scalar stat, int dof);

/// Chi-square goodness-of-fit p-value of observed counts against expected
/// probabilities (dof = bins - 1).
Scalar chi_square_gof_pvalue(std::span<const long> counts, const Vec& expected_probs);

/// Neumaier-compensated accumulator. Reductions built on it are insensitive
/// to summation order well beyond the 1e-12 contract.
class CompensatedSum {
 public:
  void add(Scalar x) {
    const Scalar t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  Scalar value() const { return sum_ + comp_; }

 private:
  Scalar sum_ = 0.0;
  Scalar comp_ = 0.0;
};

/// Ordinary least-squares slope of y on x. Returns 0 when x is constant.
Scalar ols_slope(std::span<const Scalar> x, std::span<const Scalar> y);

}  // namespace selectkd
