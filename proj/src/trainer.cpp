// SPDX-License-Identifier: Apache-2.0
#include "selectkd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "selectkd/io_util.hpp"
#include "selectkd/stats.hpp"

namespace selectkd {

namespace {

// Stream keys hung off the root seed; each consumer owns its own split so
// adding draws to one path never shifts another.
constexpr std::uint64_t kPoolStream = 1;
constexpr std::uint64_t kDataStream = 2;
constexpr std::uint64_t kOnPolicyStream = 3;
constexpr std::uint64_t kVerifyStream = 4;
// Verifier sub-streams are keyed by sequence index and position.
constexpr std::uint64_t kPositionStride = 1ULL << 20;

const char* origin_name(Origin o) {
  switch (o) {
    case Origin::kTeacher: return "teacher";
    case Origin::kStudent: return "student";
    case Origin::kCorpus: return "corpus";
  }
  return "?";
}

std::vector<TokenId> make_prompt(PromptMode mode, int length, int vocab_size,
                                 Rng& rng, std::uint64_t cycle_counter) {
  std::vector<TokenId> prompt(static_cast<std::size_t>(length));
  if (mode == PromptMode::kRandom) {
    for (TokenId& t : prompt)
      t = static_cast<TokenId>(rng.uniform_index(static_cast<std::uint64_t>(vocab_size)));
  } else {
    // Base-vocab digits of the counter, most significant first, so prompts
    // sweep every context combination in order.
    std::uint64_t c = cycle_counter;
    for (int i = length - 1; i >= 0; --i) {
      prompt[static_cast<std::size_t>(i)] = static_cast<TokenId>(c % vocab_size);
      c /= static_cast<std::uint64_t>(vocab_size);
    }
  }
  return prompt;
}

ProbVector one_hot(Index vocab_size, TokenId token) {
  Vec p = Vec::Zero(vocab_size);
  p[token] = 1.0;
  return ProbVector(std::move(p));
}

VerifierConfig tar_shadow_config(const TrainingConfig& cfg, int vocab_size) {
  if (cfg.verifier && cfg.verifier->mode != VerifyMode::kHellinger) return *cfg.verifier;
  VerifierConfig shadow;
  shadow.mode = VerifyMode::kSpecK;
  shadow.k = std::min(5, vocab_size);
  shadow.beta = 0.01;
  return shadow;
}

}  // namespace

Schedule::Schedule(std::vector<std::pair<Scalar, Scalar>> knots) : knots_(std::move(knots)) {
  if (knots_.empty()) throw std::invalid_argument("Schedule: at least one knot required");
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    if (knots_[i].first < 0.0 || knots_[i].first > 1.0)
      throw std::invalid_argument("Schedule: knot fractions must lie in [0, 1]");
    if (i > 0 && knots_[i].first <= knots_[i - 1].first)
      throw std::invalid_argument("Schedule: knot fractions must be strictly increasing");
  }
}

Schedule Schedule::constant(Scalar value) { return Schedule({{0.0, value}}); }

Scalar Schedule::eval(Scalar step_fraction) const {
  if (!(step_fraction >= 0.0 && step_fraction <= 1.0))
    throw std::invalid_argument("Schedule: step_fraction must be in [0, 1]");
  if (step_fraction <= knots_.front().first) return knots_.front().second;
  if (step_fraction >= knots_.back().first) return knots_.back().second;
  for (std::size_t i = 1; i < knots_.size(); ++i) {
    if (step_fraction <= knots_[i].first) {
      const auto& [x0, y0] = knots_[i - 1];
      const auto& [x1, y1] = knots_[i];
      const Scalar w = (step_fraction - x0) / (x1 - x0);
      return y0 + w * (y1 - y0);
    }
  }
  return knots_.back().second;
}

Optimizer OptimizerConfig::make() const {
  if (kind == OptimizerKind::kSgd) return Optimizer(SgdConfig{lr});
  return Optimizer(AdamConfig{lr, beta1, beta2, eps});
}

void TrainingConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("TrainingConfig: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainingConfig: batch_size must be >= 1");
  if (seq_length < 1) throw std::invalid_argument("TrainingConfig: seq_length must be >= 1");
  if (prompt_length < 1)
    throw std::invalid_argument("TrainingConfig: prompt_length must be >= 1");
  if (pool_size < 1) throw std::invalid_argument("TrainingConfig: pool_size must be >= 1");
  if (!(mu >= 0.0 && mu <= 1.0))
    throw std::invalid_argument("TrainingConfig: mu must be in [0, 1]");
  if (!(optimizer.lr >= 0.0))
    throw std::invalid_argument("TrainingConfig: lr must be >= 0");
}

StepRecord train_step(NGramModel& student, const NGramModel& teacher,
                      const std::vector<Sequence>& batch, const TrainingConfig& cfg,
                      Scalar step_fraction, Optimizer& optimizer, const Rng& verify_rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: batch must be nonempty");
  if (student.vocab_size() != teacher.vocab_size())
    throw std::invalid_argument("train_step: student/teacher vocab mismatch");
  const int vocab = student.vocab_size();
  const Scalar a_t = cfg.alpha_t.eval(step_fraction);
  const Scalar a_s = cfg.alpha_s.eval(step_fraction);
  const VerifierConfig shadow_cfg = tar_shadow_config(cfg, vocab);

  RowGradMap grads;
  std::vector<VerificationOutcome> tar_outcomes;
  CompensatedSum loss_sum, raw_sum;
  const Scalar inv_batch = 1.0 / static_cast<Scalar>(batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sequence& seq = batch[i];
    if (seq.completion.empty())
      throw std::invalid_argument("train_step: completion must be nonempty");
    const std::vector<TokenId> tokens = seq.tokens();
    const std::size_t prompt_len = seq.prompt.size();

    const Scalar alpha = seq.origin == Origin::kStudent ? a_s : a_t;
    const DivergenceKind kind = cfg.divergence.with_alpha(alpha);

    std::vector<ProbVector> p_seq;
    std::vector<LogitVector> z_seq;
    std::vector<Scalar> weights;
    std::vector<Index> rows;
    p_seq.reserve(seq.completion.size());

    for (std::size_t t = prompt_len; t < tokens.size(); ++t) {
      const std::span<const TokenId> ctx(tokens.data(), t);
      const ProbVector p_teacher = softmax(predict_logits(teacher, ctx));
      LogitVector z = predict_logits(student, ctx);
      rows.push_back(student.context_index(ctx));

      Rng pos_rng = verify_rng.split(i * kPositionStride + t);
      VerificationOutcome shadow;
      const bool discrete_verifier =
          cfg.verifier && cfg.verifier->mode != VerifyMode::kHellinger;
      if (discrete_verifier) {
        // One verification serves as both the loss weight and the TAR sample.
        shadow = verify(p_teacher, softmax(z), *cfg.verifier, pos_rng);
        weights.push_back(shadow.weight);
      } else {
        // Loss weight (if any) and the TAR diagnostic use separate streams.
        if (cfg.verifier) {
          Rng loss_rng = pos_rng.split(1);
          weights.push_back(verify(p_teacher, softmax(z), *cfg.verifier, loss_rng).weight);
        } else {
          weights.push_back(1.0);
        }
        Rng shadow_rng = pos_rng.split(2);
        shadow = verify(p_teacher, softmax(z), shadow_cfg, shadow_rng);
      }
      tar_outcomes.push_back(std::move(shadow));

      p_seq.push_back(cfg.hard_targets ? one_hot(vocab, tokens[t]) : p_teacher);
      z_seq.push_back(std::move(z));
    }

    const SequenceLoss seq_loss = selectkd_loss(kind, p_seq, z_seq, weights);
    loss_sum.add(seq_loss.value);
    raw_sum.add(seq_loss.raw_value);
    for (std::size_t t = 0; t < rows.size(); ++t) {
      auto [it, inserted] = grads.try_emplace(rows[t], Vec::Zero(vocab));
      it->second += inv_batch * seq_loss.grad_logits[t];
    }
  }

  StepRecord rec;
  rec.loss = loss_sum.value() * inv_batch;
  rec.raw_div = raw_sum.value() * inv_batch;
  rec.tar = tar(tar_outcomes);
  rec.alpha_t = a_t;
  rec.alpha_s = a_s;
  rec.batch_origin = batch.front().origin;
  if (!std::isfinite(rec.loss)) throw NumericError("train_step: non-finite loss");
  optimizer.apply_grad(student, grads);
  return rec;
}

TrainingResult run_training(const TrainingConfig& cfg, const NGramModel& teacher,
                            const NGramModel& initial_student) {
  cfg.validate();
  if (cfg.verifier) cfg.verifier->validate(teacher.vocab_size());
  if (teacher.vocab_size() != initial_student.vocab_size())
    throw std::invalid_argument("run_training: student/teacher vocab mismatch");

  const Rng root(cfg.seed);
  Rng pool_rng = root.split(kPoolStream);
  Rng data_rng = root.split(kDataStream);
  const int vocab = teacher.vocab_size();

  std::vector<Sequence> pool;
  pool.reserve(static_cast<std::size_t>(cfg.pool_size));
  for (int i = 0; i < cfg.pool_size; ++i) {
    const std::vector<TokenId> prompt =
        make_prompt(cfg.prompt_mode, cfg.prompt_length, vocab, pool_rng,
                    static_cast<std::uint64_t>(i));
    pool.push_back(generate(teacher, prompt, cfg.seq_length, GenMode::kSample, 1.0,
                            pool_rng, Origin::kTeacher));
  }

  TrainingResult result{initial_student, {}, {}};
  result.row_visits.assign(static_cast<std::size_t>(initial_student.num_contexts()), 0);
  Optimizer optimizer = cfg.optimizer.make();
  result.trace.records.reserve(static_cast<std::size_t>(cfg.steps));

  for (int s = 0; s < cfg.steps; ++s) {
    const Scalar fraction =
        cfg.steps == 1 ? 0.0 : static_cast<Scalar>(s) / static_cast<Scalar>(cfg.steps - 1);
    if (cfg.optimizer.lr_schedule)
      optimizer.set_lr(cfg.optimizer.lr_schedule->eval(fraction));
    const bool on_policy = data_rng.uniform() < cfg.mu;

    std::vector<Sequence> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    if (on_policy) {
      Rng gen_rng = root.split(kOnPolicyStream).split(static_cast<std::uint64_t>(s));
      for (int i = 0; i < cfg.batch_size; ++i) {
        const std::uint64_t counter =
            static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(cfg.batch_size) +
            static_cast<std::uint64_t>(i);
        const std::vector<TokenId> prompt =
            make_prompt(cfg.prompt_mode, cfg.prompt_length, vocab, gen_rng, counter);
        batch.push_back(generate(result.student, prompt, cfg.seq_length, GenMode::kSample,
                                 1.0, gen_rng, Origin::kStudent));
      }
    } else {
      for (int i = 0; i < cfg.batch_size; ++i) {
        const std::uint64_t idx =
            data_rng.uniform_index(static_cast<std::uint64_t>(cfg.pool_size));
        batch.push_back(pool[static_cast<std::size_t>(idx)]);
      }
    }

    for (const Sequence& seq : batch) {
      const std::vector<TokenId> tokens = seq.tokens();
      for (std::size_t t = seq.prompt.size(); t < tokens.size(); ++t) {
        const std::span<const TokenId> ctx(tokens.data(), t);
        ++result.row_visits[static_cast<std::size_t>(result.student.context_index(ctx))];
      }
    }

    const Rng verify_rng = root.split(kVerifyStream).split(static_cast<std::uint64_t>(s));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      StepRecord rec = train_step(result.student, teacher, batch, cfg, fraction,
                                  optimizer, verify_rng);
      rec.step = s;
      rec.wall_ms = std::chrono::duration<Scalar, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      result.trace.records.push_back(rec);
    } catch (const NumericError&) {
      result.trace.aborted_step = s;
      break;
    }
  }
  return result;
}

void TrainingTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);  // binary keeps LF endings
  if (!os) throw std::runtime_error("write_csv: cannot open " + path.string());
  os << "step,loss,tar,raw_div,alpha_t,alpha_s,wall_ms\n";
  for (const StepRecord& r : records) {
    os << r.step << ',' << fmt_double(r.loss) << ',' << fmt_double(r.tar) << ','
       << fmt_double(r.raw_div) << ',' << fmt_double(r.alpha_t) << ','
       << fmt_double(r.alpha_s) << ',' << fmt_double(r.wall_ms) << '\n';
  }
}

void TrainingTrace::write_json(const std::filesystem::path& path) const {
  nlohmann::json arr = nlohmann::json::array();
  for (const StepRecord& r : records) {
    arr.push_back({{"step", r.step},
                   {"loss", r.loss},
                   {"tar", r.tar},
                   {"raw_div", r.raw_div},
                   {"alpha_t", r.alpha_t},
                   {"alpha_s", r.alpha_s},
                   {"wall_ms", r.wall_ms},
                   {"origin", origin_name(r.batch_origin)}});
  }
  nlohmann::json doc;
  doc["records"] = std::move(arr);
  doc["aborted_step"] = aborted_step ? nlohmann::json(*aborted_step) : nlohmann::json();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_json: cannot open " + path.string());
  os << doc.dump(2) << '\n';
}

}  // namespace selectkd
