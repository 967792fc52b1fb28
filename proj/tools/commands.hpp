// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "selectkd/types.hpp"

namespace selectkd::cli {

struct GradcheckArgs {
  std::string kind;
  std::optional<Scalar> alpha;
  int trials = 100;
  int vocab = 6;
  Scalar epsilon = 1e-5;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out;  // report file; defaults to gradcheck-<kind>-<seed>.json
};

int cmd_gradcheck(const GradcheckArgs& args);

int cmd_train(const std::filesystem::path& config_path,
              const std::vector<std::string>& overrides,
              const std::optional<std::string>& out_flag);

int cmd_study(const std::string& study, const std::filesystem::path& config_path,
              const std::vector<std::string>& overrides,
              const std::optional<std::string>& out_flag, int workers);

}  // namespace selectkd::cli
