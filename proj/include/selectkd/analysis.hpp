// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "selectkd/divergence.hpp"
#include "selectkd/ngram.hpp"
#include "selectkd/trainer.hpp"

namespace selectkd {

/// Finite-difference audit of the analytic logit gradients. The probe
/// recomputes each divergence value with an independent long-double
/// evaluator and central differences, so the check shares no code with
/// grad_logits. Per trial the error is
///   ||fd - analytic||_inf / max(||analytic||_inf, 1e-8).
struct GradCheckReport {
  std::string kind;
  int trials = 0;
  int vocab_size = 0;
  Scalar epsilon = 0.0;
  std::uint64_t seed = 0;
  Scalar max_rel_error = 0.0;
  struct Failure {
    std::uint64_t input_digest;
    Scalar rel_error;
  };
  std::vector<Failure> failures;  // trials exceeding 1e-6
};

/// Trials are keyed off the seed individually (trial i uses stream
/// split(i)), so sharding across workers cannot change the report.
GradCheckReport grad_check(const DivergenceKind& kind, int trials, int vocab_size,
                           Scalar epsilon, std::uint64_t seed, int workers = 1);

/// Convergence study: trains one student per divergence kind against the
/// same teacher/seed and reports per-context-row total variation to the
/// teacher at the end.
struct FixedPointReport {
  struct KindResult {
    std::string kind;
    Scalar mean_tv = 0.0;
    Scalar max_tv = 0.0;
    std::vector<Scalar> per_row_tv;
    std::vector<long> row_visits;
  };
  std::vector<KindResult> kinds;
  Scalar max_mean_gap = 0.0;  // largest pairwise gap between kind means
};

FixedPointReport fixed_point_study(const std::vector<DivergenceKind>& kinds,
                                   const NGramModel& teacher, const TrainingConfig& base_cfg);

/// Acceptance-rate dynamics of a selective run. The verdict passes iff the
/// 20-step moving average never falls more than `slack` below its running
/// maximum and the least-squares slope of per-step TAR increments on
/// (1 - TAR) is nonnegative.
struct TarStudyReport {
  TrainingTrace trace;
  std::vector<Scalar> moving_avg;
  int window = 20;
  Scalar slack = 0.02;
  Scalar initial_tar = 0.0;  // mean of the first window
  Scalar final_tar = 0.0;    // mean of the last window
  Scalar max_drawdown = 0.0;
  Scalar slope = 0.0;
  bool verdict = false;
};

TarStudyReport tar_study(const TrainingConfig& cfg, const NGramModel& teacher,
                         const NGramModel& student);

/// Loss surface along random directions, one Gaussian draw per direction,
/// rescaled row-by-row to the model's own row norms. loss_values(d, r) is
/// the unweighted mean divergence to `teacher` over eval_data at
/// model + radius_r * direction_d.
struct LandscapeProbe {
  std::vector<std::uint64_t> direction_seeds;
  Vec radii;
  Mat loss_values;
  Scalar base_loss = 0.0;
  Scalar sharpness = 0.0;  // max over directions of loss(r_max) - loss(0)
};

LandscapeProbe landscape_probe(const NGramModel& model, const NGramModel& teacher,
                               const DivergenceKind& kind,
                               const std::vector<Sequence>& eval_data, int n_directions,
                               const Vec& radii, std::uint64_t seed);

/// Full speculative decoding (acceptance test plus residual resampling and
/// the bonus token after an all-accepted window). Rounds are independent:
/// each restarts from one of the given prompts, cycled in order, so the
/// reported statistics refer to a fixed context distribution. Acceptance is
/// counted over tokens actually proposed.
struct SpecSimReport {
  Scalar acceptance_rate = 0.0;
  Scalar accepted_tokens_per_round = 0.0;
  Scalar tokens_per_round = 0.0;  // emitted, including residual/bonus tokens
  Scalar speedup_estimate = 0.0;  // tokens_per_round / (1 + cost_ratio * gamma)
  int gamma = 0;
  long rounds = 0;
  Scalar cost_ratio = 0.0;
  std::vector<long> first_token_counts;  // histogram of each round's first emitted token
};

/// Round i draws from rng.split(i); worker sharding merges shard counts in
/// index order, so any worker count reproduces the same report bits.
SpecSimReport spec_decode_sim(const NGramModel& drafter, const NGramModel& target,
                              const std::vector<std::vector<TokenId>>& prompts, int gamma,
                              long rounds, Scalar cost_ratio, const Rng& rng,
                              int workers = 1);

/// High-entropy teacher with a fraction of rows replaced by peaked random
/// junk; `clean` keeps the original rows for reference comparisons.
struct NoisyTeacher {
  NGramModel noisy;
  NGramModel clean;
  std::vector<Index> noise_rows;
};

NoisyTeacher make_noisy_teacher(int vocab_size, int order, Scalar clean_concentration,
                                Scalar noise_fraction, Scalar noise_concentration,
                                std::uint64_t seed);

/// Mean per-context-row total variation between two models of equal shape.
Scalar mean_row_tv(const NGramModel& a, const NGramModel& b);

// Study artifacts: <study>-<seed>.json plus a companion CSV, written into
// out_dir.
void write_grad_check_report(const GradCheckReport& report,
                             const std::filesystem::path& path);
void write_fixed_point_report(const FixedPointReport& report,
                              const std::filesystem::path& out_dir, std::uint64_t seed);
void write_tar_study_report(const TarStudyReport& report,
                            const std::filesystem::path& out_dir, std::uint64_t seed);
void write_landscape_report(const LandscapeProbe& probe,
                            const std::filesystem::path& out_dir, std::uint64_t seed);
void write_spec_sim_report(const SpecSimReport& report,
                           const std::filesystem::path& out_dir, std::uint64_t seed);

}  // namespace selectkd
