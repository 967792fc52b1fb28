// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "selectkd/divergence.hpp"
#include "selectkd/ngram.hpp"
#include "selectkd/verifier.hpp"

namespace selectkd {

/// Piecewise-linear schedule over the step fraction in [0, 1].
class Schedule {
 public:
  /// Knots as (fraction, value) pairs with strictly increasing fractions.
  explicit Schedule(std::vector<std::pair<Scalar, Scalar>> knots);
  static Schedule constant(Scalar value);

  Scalar eval(Scalar step_fraction) const;
  const std::vector<std::pair<Scalar, Scalar>>& knots() const { return knots_; }

 private:
  std::vector<std::pair<Scalar, Scalar>> knots_;
};

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  Scalar lr = 0.5;  // SGD default; Adam preset uses 0.05
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
  /// Optional learning-rate decay over the step fraction; overrides lr.
  std::optional<Schedule> lr_schedule;

  Optimizer make() const;
};

enum class PromptMode { kRandom, kCycle };

struct TrainingConfig {
  DivergenceKind divergence = DivergenceKind::fkl();
  /// Verification config; nullopt trains the vanilla (non-selective) baseline.
  std::optional<VerifierConfig> verifier;
  /// Probability that a step's batch is regenerated from the current student
  /// (on-policy) instead of drawn from the fixed teacher pool.
  Scalar mu = 0.5;
  Schedule alpha_t = Schedule::constant(0.1);
  Schedule alpha_s = Schedule::constant(0.1);
  int steps = 100;
  int batch_size = 8;
  int seq_length = 16;
  int prompt_length = 1;
  int pool_size = 64;
  PromptMode prompt_mode = PromptMode::kRandom;
  /// Replace the teacher distribution with a one-hot at the observed next
  /// token: sequence-level fine-tuning instead of distribution matching.
  bool hard_targets = false;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepRecord {
  int step = 0;
  Scalar loss = 0.0;     // mean weighted per-sequence loss
  Scalar tar = 0.0;      // acceptance rate over the batch's verified positions
  Scalar raw_div = 0.0;  // mean unweighted divergence
  Scalar alpha_t = 0.0;
  Scalar alpha_s = 0.0;
  Scalar wall_ms = 0.0;
  Origin batch_origin = Origin::kTeacher;
};

struct TrainingTrace {
  std::vector<StepRecord> records;
  std::optional<int> aborted_step;

  /// CSV with header step,loss,tar,raw_div,alpha_t,alpha_s,wall_ms and LF
  /// line endings.
  void write_csv(const std::filesystem::path& path) const;
  /// JSON array of records; carries a batch-origin field per record on top
  /// of the CSV columns.
  void write_json(const std::filesystem::path& path) const;
};

/// One optimization step over a prepared batch. The verification weights are
/// plain constants (the verifier emits numbers, so no gradient can flow
/// through it). TAR is always measured with a discrete verifier: the
/// configured one, or a shadow Spec-k when the run is vanilla or Hellinger.
/// Throws NumericError if the loss or an update turns non-finite.
StepRecord train_step(NGramModel& student, const NGramModel& teacher,
                      const std::vector<Sequence>& batch, const TrainingConfig& cfg,
                      Scalar step_fraction, Optimizer& optimizer, const Rng& verify_rng);

struct TrainingResult {
  NGramModel student;
  TrainingTrace trace;
  /// How often each student context row appeared in a training batch.
  std::vector<long> row_visits;
};

/// Full training loop: pregenerates the off-policy pool from the teacher,
/// then per step draws either an on-policy batch (regenerated from the
/// current student) or a pool batch, and applies train_step. Deterministic
/// for a fixed config and seed. On NumericError the loop stops and the trace
/// is flagged with the aborted step.
TrainingResult run_training(const TrainingConfig& cfg, const NGramModel& teacher,
                            const NGramModel& initial_student);

}  // namespace selectkd
