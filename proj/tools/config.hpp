// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selectkd/analysis.hpp"
#include "selectkd/trainer.hpp"

namespace selectkd::cli {

/// Everything one experiment needs, parsed from a single versioned JSON
/// config. Unknown keys anywhere in the document are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";

  // Teacher: either a Dirichlet-random table or a model file.
  struct Teacher {
    std::string type = "random";  // "random" | "file"
    int vocab_size = 16;
    int order = 1;
    Scalar concentration = 0.1;
    std::optional<std::uint64_t> seed;  // defaults to a stream off the top seed
    std::optional<Scalar> noise_fraction;
    Scalar noise_concentration = 0.05;
    std::filesystem::path file;
  } teacher;

  struct Student {
    std::string init = "uniform";  // "uniform" | "file"
    std::filesystem::path file;
  } student;

  TrainingConfig training;

  struct FixedPointStudy {
    std::vector<DivergenceKind> kinds = {
        DivergenceKind::fkl(), DivergenceKind::rkl(), DivergenceKind::skl(0.1),
        DivergenceKind::srkl(0.1)};
    Scalar tv_threshold = 1e-3;
    Scalar gap_threshold = 2e-3;
  } fixed_point;

  struct LandscapeStudy {
    int n_directions = 10;
    Scalar radius_max = 1.0;
    int radius_steps = 21;
    int eval_sequences = 32;
  } landscape;

  struct SpecSimStudy {
    int gamma = 4;
    long rounds = 20000;
    Scalar cost_ratio = 0.1;
    std::string drafter = "student";  // "student" | "target" | "file"
    std::filesystem::path drafter_file;
    int n_prompts = 8;
  } spec_sim;

  /// Builds the teacher model this config describes.
  NGramModel make_teacher() const;
  /// Builds the initial student (shape follows the teacher).
  NGramModel make_student(const NGramModel& teacher) const;
};

/// Parse + validate a config file. Throws std::invalid_argument on schema
/// violations (including unknown keys) and malformed JSON.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides);

/// Applies one "dotted.path=json_value" override to a JSON document.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace selectkd::cli
