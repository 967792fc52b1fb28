// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace selectkd {

using Scalar = double;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

// Vocabulary index. Plain integer on purpose: token ids flow through tight
// loops and containers everywhere.
using TokenId = std::int32_t;

// Probabilities below this floor are clamped before any log or ratio.
// Applied inside divergence/acceptance computations, never stored.
inline constexpr Scalar kProbFloor = 1e-12;

}  // namespace selectkd
