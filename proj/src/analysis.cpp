// SPDX-License-Identifier: Apache-2.0
#include "selectkd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "selectkd/io_util.hpp"
#include "selectkd/stats.hpp"

namespace selectkd {

namespace {

using json = nlohmann::json;
using LVec = std::vector<long double>;

// Independent long-double divergence evaluator backing the finite-difference
// oracle. Deliberately separate from the production value path.
namespace fd_oracle {

constexpr long double kFloorLd = 1e-12L;

LVec softmax_ld(const LVec& z) {
  long double zmax = z[0];
  for (long double v : z) zmax = std::max(zmax, v);
  long double total = 0.0L;
  LVec e(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(z[i] - zmax);
    total += e[i];
  }
  for (long double& v : e) v /= total;
  return e;
}

long double kl_ld(const LVec& a, const LVec& b) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += a[i] * (std::log(std::max(a[i], kFloorLd)) - std::log(std::max(b[i], kFloorLd)));
  return acc;
}

long double value(const DivergenceKind& kind, const LVec& p, const LVec& z) {
  const LVec q = softmax_ld(z);
  const long double alpha = static_cast<long double>(kind.alpha());
  LVec m(p.size());
  switch (kind.family()) {
    case DivergenceKind::Family::kFkl:
      return kl_ld(p, q);
    case DivergenceKind::Family::kRkl:
      return kl_ld(q, p);
    case DivergenceKind::Family::kSkl:
      for (std::size_t i = 0; i < p.size(); ++i) m[i] = alpha * p[i] + (1.0L - alpha) * q[i];
      return kl_ld(p, m);
    case DivergenceKind::Family::kSrkl:
      for (std::size_t i = 0; i < p.size(); ++i) m[i] = (1.0L - alpha) * p[i] + alpha * q[i];
      return kl_ld(q, m);
  }
  throw std::logic_error("fd_oracle::value: unreachable");
}

}  // namespace fd_oracle

ProbVector row_distribution(const NGramModel& model, Index row) {
  return softmax(LogitVector(model.logit_table().row(row).transpose()));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << text;
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

}  // namespace

namespace {

// Infinity-norm relative error of one freshly drawn trial.
Scalar grad_check_trial(const DivergenceKind& kind, int vocab_size, Scalar epsilon,
                        Rng rng) {
  const Vec p_vec = rng.dirichlet(1.0, vocab_size);
  Vec z_vec(vocab_size);
  for (Index j = 0; j < vocab_size; ++j) z_vec[j] = rng.uniform(-4.0, 4.0);

  const ProbVector p(p_vec);
  const LogitVector z(z_vec);
  const Vec analytic = grad_logits(kind, p, z);

  LVec p_ld(p_vec.data(), p_vec.data() + vocab_size);
  LVec z_ld(z_vec.data(), z_vec.data() + vocab_size);
  Vec fd(vocab_size);
  for (Index j = 0; j < vocab_size; ++j) {
    const long double z0 = z_ld[static_cast<std::size_t>(j)];
    z_ld[static_cast<std::size_t>(j)] = z0 + static_cast<long double>(epsilon);
    const long double up = fd_oracle::value(kind, p_ld, z_ld);
    z_ld[static_cast<std::size_t>(j)] = z0 - static_cast<long double>(epsilon);
    const long double down = fd_oracle::value(kind, p_ld, z_ld);
    z_ld[static_cast<std::size_t>(j)] = z0;
    fd[j] = static_cast<Scalar>((up - down) / (2.0L * static_cast<long double>(epsilon)));
  }

  const Scalar denom = std::max((analytic.array().abs()).maxCoeff(), 1e-8);
  return (fd - analytic).array().abs().maxCoeff() / denom;
}

// Runs fn(i) for i in [0, n) across the requested workers; shard boundaries
// never influence per-index results.
void shard_indices(long n, int workers, const std::function<void(long, int)>& fn) {
  const int w = static_cast<int>(std::max<long>(1, std::min<long>(workers, n)));
  if (w == 1) {
    for (long i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  for (int s = 0; s < w; ++s) {
    const long lo = n * s / w;
    const long hi = n * (s + 1) / w;
    pool.emplace_back([lo, hi, s, &fn] {
      for (long i = lo; i < hi; ++i) fn(i, s);
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace

GradCheckReport grad_check(const DivergenceKind& kind, int trials, int vocab_size,
                           Scalar epsilon, std::uint64_t seed, int workers) {
  if (trials < 1) throw std::invalid_argument("grad_check: trials must be >= 1");
  if (vocab_size < 2) throw std::invalid_argument("grad_check: vocab_size must be >= 2");
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw std::invalid_argument("grad_check: epsilon must be in [1e-7, 1e-3]");
  if (workers < 1) throw std::invalid_argument("grad_check: workers must be >= 1");

  GradCheckReport report;
  report.kind = kind.name() + (kind.skewed() ? "(" + fmt_double(kind.alpha()) + ")" : "");
  report.trials = trials;
  report.vocab_size = vocab_size;
  report.epsilon = epsilon;
  report.seed = seed;

  const Rng root(seed);
  std::vector<Scalar> rel_errors(static_cast<std::size_t>(trials));
  shard_indices(trials, workers, [&](long trial, int) {
    rel_errors[static_cast<std::size_t>(trial)] = grad_check_trial(
        kind, vocab_size, epsilon, root.split(static_cast<std::uint64_t>(trial)));
  });
  for (int trial = 0; trial < trials; ++trial) {
    const Scalar rel = rel_errors[static_cast<std::size_t>(trial)];
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (rel >= 1e-6)
      report.failures.push_back(
          {splitmix64(seed ^ static_cast<std::uint64_t>(trial)), rel});
  }
  return report;
}

FixedPointReport fixed_point_study(const std::vector<DivergenceKind>& kinds,
                                   const NGramModel& teacher, const TrainingConfig& base_cfg) {
  if (kinds.empty()) throw std::invalid_argument("fixed_point_study: no kinds given");
  FixedPointReport report;
  for (const DivergenceKind& kind : kinds) {
    TrainingConfig cfg = base_cfg;
    cfg.divergence = kind;
    NGramModel student =
        NGramModel::uniform(teacher.vocab_size(), teacher.order(), teacher.bos_token());
    std::vector<long> visits(static_cast<std::size_t>(teacher.num_contexts()), 0);
    if (cfg.steps > 0) {
      // steps == 0 is the report-only path: measure the initial distance.
      TrainingResult result = run_training(cfg, teacher, student);
      student = std::move(result.student);
      visits = std::move(result.row_visits);
    }

    FixedPointReport::KindResult kr;
    kr.kind = kind.name();
    kr.row_visits = std::move(visits);
    kr.per_row_tv.resize(static_cast<std::size_t>(teacher.num_contexts()));
    CompensatedSum mean;
    for (Index r = 0; r < teacher.num_contexts(); ++r) {
      const Scalar tv =
          tv_distance(row_distribution(student, r), row_distribution(teacher, r));
      kr.per_row_tv[static_cast<std::size_t>(r)] = tv;
      kr.max_tv = std::max(kr.max_tv, tv);
      mean.add(tv);
    }
    kr.mean_tv = mean.value() / static_cast<Scalar>(teacher.num_contexts());
    report.kinds.push_back(std::move(kr));
  }
  for (const auto& a : report.kinds)
    for (const auto& b : report.kinds)
      report.max_mean_gap = std::max(report.max_mean_gap, std::abs(a.mean_tv - b.mean_tv));
  return report;
}

TarStudyReport tar_study(const TrainingConfig& cfg, const NGramModel& teacher,
                         const NGramModel& student) {
  if (!cfg.verifier || cfg.verifier->mode == VerifyMode::kHellinger)
    throw std::invalid_argument("tar_study: cfg must use a discrete selective verifier");

  TarStudyReport report;
  TrainingResult result = run_training(cfg, teacher, student);
  report.trace = std::move(result.trace);
  const std::vector<StepRecord>& recs = report.trace.records;
  if (static_cast<int>(recs.size()) < 2 * report.window)
    throw std::invalid_argument("tar_study: need at least two moving-average windows");

  const int w = report.window;
  const int n = static_cast<int>(recs.size());
  report.moving_avg.resize(static_cast<std::size_t>(n - w + 1));
  CompensatedSum acc;
  for (int i = 0; i < w; ++i) acc.add(recs[static_cast<std::size_t>(i)].tar);
  report.moving_avg[0] = acc.value() / w;
  for (int i = w; i < n; ++i) {
    acc.add(recs[static_cast<std::size_t>(i)].tar);
    acc.add(-recs[static_cast<std::size_t>(i - w)].tar);
    report.moving_avg[static_cast<std::size_t>(i - w + 1)] = acc.value() / w;
  }

  Scalar run_max = report.moving_avg.front();
  for (Scalar v : report.moving_avg) {
    run_max = std::max(run_max, v);
    report.max_drawdown = std::max(report.max_drawdown, run_max - v);
  }
  report.initial_tar = report.moving_avg.front();
  report.final_tar = report.moving_avg.back();

  std::vector<Scalar> xs, ys;
  xs.reserve(static_cast<std::size_t>(n - 1));
  for (int i = 0; i + 1 < n; ++i) {
    xs.push_back(1.0 - recs[static_cast<std::size_t>(i)].tar);
    ys.push_back(recs[static_cast<std::size_t>(i + 1)].tar - recs[static_cast<std::size_t>(i)].tar);
  }
  report.slope = ols_slope(xs, ys);
  report.verdict = report.max_drawdown <= report.slack && report.slope >= 0.0;
  return report;
}

LandscapeProbe landscape_probe(const NGramModel& model, const NGramModel& teacher,
                               const DivergenceKind& kind,
                               const std::vector<Sequence>& eval_data, int n_directions,
                               const Vec& radii, std::uint64_t seed) {
  if (n_directions < 2)
    throw std::invalid_argument("landscape_probe: n_directions must be >= 2");
  if (eval_data.empty()) throw std::invalid_argument("landscape_probe: eval_data empty");
  if (radii.size() < 1 || radii[0] != 0.0)
    throw std::invalid_argument("landscape_probe: radii must start at 0");

  const auto eval_loss = [&](const NGramModel& m) {
    CompensatedSum acc;
    for (const Sequence& seq : eval_data) {
      const std::vector<TokenId> tokens = seq.tokens();
      CompensatedSum seq_acc;
      std::size_t count = 0;
      for (std::size_t t = seq.prompt.size(); t < tokens.size(); ++t) {
        const std::span<const TokenId> ctx(tokens.data(), t);
        const ProbVector p = softmax(predict_logits(teacher, ctx));
        const ProbVector q = softmax(predict_logits(m, ctx));
        seq_acc.add(divergence(kind, p, q));
        ++count;
      }
      acc.add(seq_acc.value() / static_cast<Scalar>(count));
    }
    return acc.value() / static_cast<Scalar>(eval_data.size());
  };

  LandscapeProbe probe;
  probe.radii = radii;
  probe.base_loss = eval_loss(model);
  probe.loss_values.resize(n_directions, radii.size());

  const Mat& table = model.logit_table();
  for (int d = 0; d < n_directions; ++d) {
    const std::uint64_t dir_seed = splitmix64(seed ^ static_cast<std::uint64_t>(d));
    probe.direction_seeds.push_back(dir_seed);
    Rng rng(dir_seed);
    Mat dir(table.rows(), table.cols());
    for (Index r = 0; r < dir.rows(); ++r) {
      for (Index c = 0; c < dir.cols(); ++c) dir(r, c) = rng.normal();
      const Scalar norm = dir.row(r).norm();
      // Filter-style normalization: scale each row direction to the model's
      // own row norm (unit length where the row is all zero).
      const Scalar target_norm = table.row(r).norm();
      dir.row(r) *= (target_norm > 0.0 ? target_norm : 1.0) / norm;
    }
    for (Index ri = 0; ri < radii.size(); ++ri) {
      if (radii[ri] == 0.0) {
        probe.loss_values(d, ri) = probe.base_loss;
        continue;
      }
      NGramModel displaced(model.vocab_size(), model.order(), model.bos_token(),
                           table + radii[ri] * dir);
      probe.loss_values(d, ri) = eval_loss(displaced);
    }
  }
  probe.sharpness =
      (probe.loss_values.col(radii.size() - 1).array() - probe.base_loss).maxCoeff();
  return probe;
}

namespace {

struct SimCounts {
  long drafted = 0;
  long accepted = 0;
  long emitted = 0;
  std::vector<long> first_token_counts;
};

void run_sim_round(const NGramModel& drafter, const NGramModel& target,
                   const std::vector<TokenId>& prompt, int gamma, Rng& rng,
                   SimCounts& counts) {
  std::vector<TokenId> ctx = prompt;
  bool all_accepted = true;
  TokenId first_emitted = -1;
  for (int i = 0; i < gamma; ++i) {
    const ProbVector q = softmax(predict_logits(drafter, ctx));
    const ProbVector p = softmax(predict_logits(target, ctx));
    const TokenId y = sample(q, rng);
    const Scalar u = rng.uniform();
    ++counts.drafted;
    const Scalar ratio = std::max(p[y], kProbFloor) / std::max(q[y], kProbFloor);
    if (u < std::min(1.0, ratio)) {
      ++counts.accepted;
      ++counts.emitted;
      if (first_emitted < 0) first_emitted = y;
      ctx.push_back(y);
      continue;
    }
    // First rejection: resample from the normalized residual and stop.
    Vec residual = (p.probs() - q.probs()).cwiseMax(0.0);
    const Scalar total = residual.sum();
    const TokenId fallback =
        total > 0.0 ? sample(ProbVector(residual / total), rng) : sample(p, rng);
    ++counts.emitted;
    if (first_emitted < 0) first_emitted = fallback;
    all_accepted = false;
    break;
  }
  if (all_accepted) {
    // Bonus token from the target at the position after the window.
    const ProbVector p = softmax(predict_logits(target, ctx));
    const TokenId bonus = sample(p, rng);
    ++counts.emitted;
    if (first_emitted < 0) first_emitted = bonus;  // unreachable for gamma >= 1
  }
  ++counts.first_token_counts[static_cast<std::size_t>(first_emitted)];
}

}  // namespace

SpecSimReport spec_decode_sim(const NGramModel& drafter, const NGramModel& target,
                              const std::vector<std::vector<TokenId>>& prompts, int gamma,
                              long rounds, Scalar cost_ratio, const Rng& rng,
                              int workers) {
  if (gamma < 1) throw std::invalid_argument("spec_decode_sim: gamma must be >= 1");
  if (rounds < 1) throw std::invalid_argument("spec_decode_sim: rounds must be >= 1");
  if (prompts.empty()) throw std::invalid_argument("spec_decode_sim: prompts empty");
  if (workers < 1) throw std::invalid_argument("spec_decode_sim: workers must be >= 1");
  if (drafter.vocab_size() != target.vocab_size())
    throw std::invalid_argument("spec_decode_sim: vocab mismatch");
  const int vocab = target.vocab_size();

  SpecSimReport report;
  report.gamma = gamma;
  report.rounds = rounds;
  report.cost_ratio = cost_ratio;

  const int w = static_cast<int>(std::max<long>(1, std::min<long>(workers, rounds)));
  std::vector<SimCounts> shards(static_cast<std::size_t>(w));
  for (SimCounts& c : shards) c.first_token_counts.assign(static_cast<std::size_t>(vocab), 0);
  shard_indices(rounds, w, [&](long round, int shard) {
    Rng round_rng = rng.split(static_cast<std::uint64_t>(round));
    run_sim_round(drafter, target,
                  prompts[static_cast<std::size_t>(round % static_cast<long>(prompts.size()))],
                  gamma, round_rng, shards[static_cast<std::size_t>(shard)]);
  });

  long drafted = 0, accepted = 0, emitted = 0;
  report.first_token_counts.assign(static_cast<std::size_t>(vocab), 0);
  for (const SimCounts& c : shards) {
    drafted += c.drafted;
    accepted += c.accepted;
    emitted += c.emitted;
    for (std::size_t i = 0; i < c.first_token_counts.size(); ++i)
      report.first_token_counts[i] += c.first_token_counts[i];
  }

  report.acceptance_rate = static_cast<Scalar>(accepted) / static_cast<Scalar>(drafted);
  report.accepted_tokens_per_round =
      static_cast<Scalar>(accepted) / static_cast<Scalar>(rounds);
  report.tokens_per_round = static_cast<Scalar>(emitted) / static_cast<Scalar>(rounds);
  report.speedup_estimate =
      report.tokens_per_round / (1.0 + cost_ratio * static_cast<Scalar>(gamma));
  return report;
}

NoisyTeacher make_noisy_teacher(int vocab_size, int order, Scalar clean_concentration,
                                Scalar noise_fraction, Scalar noise_concentration,
                                std::uint64_t seed) {
  if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0))
    throw std::invalid_argument("make_noisy_teacher: noise_fraction must be in [0, 1]");
  NGramModel clean = random_teacher(vocab_size, order, clean_concentration, seed);
  NGramModel noisy = clean;
  Rng rng = Rng(seed).split(0xBADF00D);
  const Index rows = clean.num_contexts();
  const Index n_noise = static_cast<Index>(
      std::llround(noise_fraction * static_cast<Scalar>(rows)));

  // Sample distinct rows by shuffling indices with the dedicated stream.
  std::vector<Index> order_rows(static_cast<std::size_t>(rows));
  for (Index i = 0; i < rows; ++i) order_rows[static_cast<std::size_t>(i)] = i;
  for (Index i = rows - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
    std::swap(order_rows[static_cast<std::size_t>(i)], order_rows[static_cast<std::size_t>(j)]);
  }

  NoisyTeacher out{std::move(noisy), std::move(clean), {}};
  for (Index i = 0; i < n_noise; ++i) {
    const Index r = order_rows[static_cast<std::size_t>(i)];
    const Vec junk = rng.dirichlet(noise_concentration, vocab_size);
    out.noisy.logit_table().row(r) = junk.array().max(kProbFloor).log().transpose();
    out.noise_rows.push_back(r);
  }
  std::sort(out.noise_rows.begin(), out.noise_rows.end());
  return out;
}

Scalar mean_row_tv(const NGramModel& a, const NGramModel& b) {
  if (a.num_contexts() != b.num_contexts() || a.vocab_size() != b.vocab_size())
    throw std::invalid_argument("mean_row_tv: shape mismatch");
  CompensatedSum acc;
  for (Index r = 0; r < a.num_contexts(); ++r)
    acc.add(tv_distance(row_distribution(a, r), row_distribution(b, r)));
  return acc.value() / static_cast<Scalar>(a.num_contexts());
}

void write_grad_check_report(const GradCheckReport& report,
                             const std::filesystem::path& path) {
  json failures = json::array();
  for (const auto& f : report.failures)
    failures.push_back({{"input_digest", f.input_digest}, {"rel_error", f.rel_error}});
  write_json_file(path, json{{"kind", report.kind},
                             {"trials", report.trials},
                             {"vocab_size", report.vocab_size},
                             {"epsilon", report.epsilon},
                             {"seed", report.seed},
                             {"max_rel_error", report.max_rel_error},
                             {"failures", failures}});
}

void write_fixed_point_report(const FixedPointReport& report,
                              const std::filesystem::path& out_dir, std::uint64_t seed) {
  json kinds = json::array();
  std::string csv = "kind,row,visits,tv\n";
  for (const auto& kr : report.kinds) {
    kinds.push_back({{"kind", kr.kind}, {"mean_tv", kr.mean_tv}, {"max_tv", kr.max_tv}});
    for (std::size_t r = 0; r < kr.per_row_tv.size(); ++r)
      csv += kr.kind + "," + std::to_string(r) + "," + std::to_string(kr.row_visits[r]) +
             "," + fmt_double(kr.per_row_tv[r]) + "\n";
  }
  const std::string stem = "fixed-point-" + std::to_string(seed);
  write_json_file(out_dir / (stem + ".json"),
                  json{{"kinds", kinds}, {"max_mean_gap", report.max_mean_gap}});
  write_text_file(out_dir / (stem + ".csv"), csv);
}

void write_tar_study_report(const TarStudyReport& report,
                            const std::filesystem::path& out_dir, std::uint64_t seed) {
  const std::string stem = "tar-" + std::to_string(seed);
  std::string csv = "step,tar,tar_ma\n";
  for (std::size_t i = 0; i < report.trace.records.size(); ++i) {
    const StepRecord& r = report.trace.records[i];
    const int w = report.window;
    std::string ma;
    if (static_cast<int>(i) >= w - 1)
      ma = fmt_double(report.moving_avg[i - static_cast<std::size_t>(w - 1)]);
    csv += std::to_string(r.step) + "," + fmt_double(r.tar) + "," + ma + "\n";
  }
  write_json_file(out_dir / (stem + ".json"),
                  json{{"window", report.window},
                       {"slack", report.slack},
                       {"initial_tar", report.initial_tar},
                       {"final_tar", report.final_tar},
                       {"max_drawdown", report.max_drawdown},
                       {"slope", report.slope},
                       {"verdict", report.verdict}});
  write_text_file(out_dir / (stem + ".csv"), csv);
}

void write_landscape_report(const LandscapeProbe& probe,
                            const std::filesystem::path& out_dir, std::uint64_t seed) {
  const std::string stem = "landscape-" + std::to_string(seed);
  std::string csv = "direction";
  for (Index r = 0; r < probe.radii.size(); ++r) csv += "," + fmt_double(probe.radii[r]);
  csv += "\n";
  for (Index d = 0; d < probe.loss_values.rows(); ++d) {
    csv += std::to_string(d);
    for (Index r = 0; r < probe.loss_values.cols(); ++r)
      csv += "," + fmt_double(probe.loss_values(d, r));
    csv += "\n";
  }
  write_json_file(out_dir / (stem + ".json"),
                  json{{"direction_seeds", probe.direction_seeds},
                       {"base_loss", probe.base_loss},
                       {"sharpness", probe.sharpness}});
  write_text_file(out_dir / (stem + ".csv"), csv);
}

void write_spec_sim_report(const SpecSimReport& report,
                           const std::filesystem::path& out_dir, std::uint64_t seed) {
  const std::string stem = "spec-sim-" + std::to_string(seed);
  std::string csv = "token,first_emitted_count\n";
  for (std::size_t i = 0; i < report.first_token_counts.size(); ++i)
    csv += std::to_string(i) + "," + std::to_string(report.first_token_counts[i]) + "\n";
  write_json_file(out_dir / (stem + ".json"),
                  json{{"acceptance_rate", report.acceptance_rate},
                       {"accepted_tokens_per_round", report.accepted_tokens_per_round},
                       {"tokens_per_round", report.tokens_per_round},
                       {"speedup_estimate", report.speedup_estimate},
                       {"gamma", report.gamma},
                       {"rounds", report.rounds},
                       {"cost_ratio", report.cost_ratio}});
  write_text_file(out_dir / (stem + ".csv"), csv);
}

}  // namespace selectkd
