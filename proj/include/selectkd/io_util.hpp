// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <string>

#include "selectkd/types.hpp"

namespace selectkd {

/// Shortest round-trip decimal form of x (std::to_chars); the same bits
/// always print the same text.
inline std::string fmt_double(Scalar x) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

}  // namespace selectkd
