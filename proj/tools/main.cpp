// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "selectkd/ngram.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace selectkd::cli;

  CLI::App app{"selectkd - selective token-weighted knowledge distillation on tabular models"};
  app.require_subcommand(1);

  GradcheckArgs gc;
  double gc_alpha = 0.0;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Check analytic divergence gradients against finite differences");
  gradcheck->add_option("--kind", gc.kind, "Divergence kind: fkl | rkl | skl | srkl")
      ->required();
  CLI::Option* alpha_opt =
      gradcheck->add_option("--alpha", gc_alpha, "Skew coefficient (skl/srkl only)");
  gradcheck->add_option("--trials", gc.trials, "Random instances to test");
  gradcheck->add_option("--vocab", gc.vocab, "Vocabulary size");
  gradcheck->add_option("--epsilon", gc.epsilon, "Central-difference step");
  gradcheck->add_option("--seed", gc.seed, "Random seed");
  gradcheck->add_option("--workers", gc.workers, "Worker threads (identical results)");
  gradcheck->add_option("--out", gc.out, "Report file path");

  std::string train_config;
  std::vector<std::string> train_sets;
  std::optional<std::string> train_out;
  CLI::App* train = app.add_subcommand("train", "Run a distillation experiment");
  train->add_option("config", train_config, "Experiment config (JSON)")->required();
  train->add_option("--set", train_sets, "Override config values: dotted.path=value");
  train->add_option("--out", [&train_out](const std::vector<std::string>& v) {
    train_out = v.front();
    return true;
  }, "Output directory (wins over SELECTKD_OUT and the config)");

  std::string study_name, study_config;
  std::vector<std::string> study_sets;
  std::optional<std::string> study_out;
  int study_workers = 1;
  CLI::App* study = app.add_subcommand(
      "study", "Run an analysis study: fixed-point | tar | landscape | spec-sim");
  study->add_option("name", study_name, "Study name")->required();
  study->add_option("config", study_config, "Experiment config (JSON)")->required();
  study->add_option("--set", study_sets, "Override config values: dotted.path=value");
  study->add_option("--workers", study_workers,
                    "Worker threads for the Monte-Carlo studies (identical results)");
  study->add_option("--out", [&study_out](const std::vector<std::string>& v) {
    study_out = v.front();
    return true;
  }, "Output directory (wins over SELECTKD_OUT and the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems exit 2, --help exits 0
  }

  try {
    if (gradcheck->parsed()) {
      if (alpha_opt->count() > 0) gc.alpha = gc_alpha;
      return cmd_gradcheck(gc);
    }
    if (train->parsed()) return cmd_train(train_config, train_sets, train_out);
    return cmd_study(study_name, study_config, study_sets, study_out, study_workers);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const selectkd::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
