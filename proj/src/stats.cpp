// SPDX-License-Identifier: Apache-2.0
#include "selectkd/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace selectkd {

namespace {

Scalar gamma_q_series(Scalar a, Scalar x) {
  // P(a,x) by power series, then Q = 1 - P.
  Scalar term = 1.0 / a;
  Scalar sum = term;
  Scalar ap = a;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  const Scalar log_prefix = a * std::log(x) - x - std::lgamma(a);
  return 1.0 - sum * std::exp(log_prefix);
}

Scalar gamma_q_cont_fraction(Scalar a, Scalar x) {
  // Modified Lentz evaluation of the standard continued fraction for Q.
  constexpr Scalar tiny = 1e-300;
  Scalar b = x + 1.0 - a;
  Scalar c = 1.0 / tiny;
  Scalar d = 1.0 / b;
  Scalar h = d;
  for (int i = 1; i <= 500; ++i) {
    const Scalar an = -static_cast<Scalar>(i) * (static_cast<Scalar>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const Scalar delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  const Scalar log_prefix = a * std::log(x) - x - std::lgamma(a);
  return std::exp(log_prefix) * h;
}

}  // namespace

Scalar gamma_q(Scalar a, Scalar x) {
  if (!(a > 0.0) || x < 0.0)
    throw std::invalid_argument("gamma_q: need a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return gamma_q_series(a, x);
  return gamma_q_cont_fraction(a, x);
}

Scalar chi_square_sf(Scalar stat, int dof) {
  if (dof < 1) throw std::invalid_argument("chi_square_sf: dof must be >= 1");
  if (stat <= 0.0) return 1.0;
  return gamma_q(0.5 * static_cast<Scalar>(dof), 0.5 * stat);
}

Scalar chi_square_gof_pvalue(std::span<const long> counts, const Vec& expected_probs) {
  if (static_cast<Index>(counts.size()) != expected_probs.size())
    throw std::invalid_argument("chi_square_gof_pvalue: size mismatch");
  long total = 0;
  for (long c : counts) total += c;
  if (total <= 0) throw std::invalid_argument("chi_square_gof_pvalue: empty sample");
  CompensatedSum stat;
  for (Index i = 0; i < expected_probs.size(); ++i) {
    const Scalar expected = expected_probs[i] * static_cast<Scalar>(total);
    if (expected <= 0.0) {
      if (counts[static_cast<std::size_t>(i)] != 0)
        return 0.0;  // observed mass where none is possible
      continue;
    }
    const Scalar diff = static_cast<Scalar>(counts[static_cast<std::size_t>(i)]) - expected;
    stat.add(diff * diff / expected);
  }
  return chi_square_sf(stat.value(), static_cast<int>(expected_probs.size()) - 1);
}

Scalar ols_slope(std::span<const Scalar> x, std::span<const Scalar> y) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("ols_slope: inputs must be nonempty and equal length");
  const Scalar n = static_cast<Scalar>(x.size());
  CompensatedSum sx, sy, sxx, sxy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx.add(x[i]);
    sy.add(y[i]);
    sxx.add(x[i] * x[i]);
    sxy.add(x[i] * y[i]);
  }
  const Scalar denom = sxx.value() - sx.value() * sx.value() / n;
  if (denom <= 0.0) return 0.0;
  return (sxy.value() - sx.value() * sy.value() / n) / denom;
}

}  // namespace selectkd
