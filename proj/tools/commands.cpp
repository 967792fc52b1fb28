// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <cstdlib>
#include <iostream>

#include "selectkd/analysis.hpp"
#include "selectkd/io_util.hpp"
#include "config.hpp"

namespace selectkd::cli {

namespace {

namespace fs = std::filesystem;

// Precedence: --out flag, then SELECTKD_OUT, then the config value.
fs::path resolve_out_dir(const fs::path& from_config,
                         const std::optional<std::string>& out_flag) {
  if (out_flag) return *out_flag;
  if (const char* env = std::getenv("SELECTKD_OUT"); env && *env) return env;
  return from_config;
}

std::vector<std::vector<TokenId>> make_sim_prompts(int n_prompts, int prompt_length,
                                                   int vocab, Rng& rng) {
  std::vector<std::vector<TokenId>> prompts;
  prompts.reserve(static_cast<std::size_t>(n_prompts));
  for (int i = 0; i < n_prompts; ++i) {
    std::vector<TokenId> p(static_cast<std::size_t>(prompt_length));
    for (TokenId& t : p)
      t = static_cast<TokenId>(rng.uniform_index(static_cast<std::uint64_t>(vocab)));
    prompts.push_back(std::move(p));
  }
  return prompts;
}

}  // namespace

int cmd_gradcheck(const GradcheckArgs& args) {
  if (args.trials < 1) throw std::invalid_argument("gradcheck: --trials must be >= 1");
  if (args.vocab < 2) throw std::invalid_argument("gradcheck: --vocab must be >= 2");
  const DivergenceKind kind = DivergenceKind::parse(args.kind, args.alpha);

  const GradCheckReport report =
      grad_check(kind, args.trials, args.vocab, args.epsilon, args.seed, args.workers);

  fs::path out = args.out.empty()
                     ? fs::path("gradcheck-" + args.kind + "-" + std::to_string(args.seed) +
                                ".json")
                     : fs::path(args.out);
  if (args.out.empty()) {
    if (const char* env = std::getenv("SELECTKD_OUT"); env && *env)
      out = fs::path(env) / out;
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_grad_check_report(report, out);

  const bool pass = report.max_rel_error < 1e-6;
  std::cout << "status=ok kind=" << report.kind << " trials=" << report.trials
            << " max_rel_error=" << fmt_double(report.max_rel_error)
            << " verdict=" << (pass ? "pass" : "fail") << " report=" << out.string()
            << "\n";
  return pass ? 0 : 1;
}

int cmd_train(const fs::path& config_path, const std::vector<std::string>& overrides,
              const std::optional<std::string>& out_flag) {
  const ExperimentConfig cfg = load_config(config_path, overrides);
  const fs::path out_dir = resolve_out_dir(cfg.output_dir, out_flag);
  fs::create_directories(out_dir);

  const NGramModel teacher = cfg.make_teacher();
  const NGramModel student0 = cfg.make_student(teacher);
  const TrainingResult result = run_training(cfg.training, teacher, student0);

  result.trace.write_csv(out_dir / "trace.csv");
  result.trace.write_json(out_dir / "trace.json");
  save_model(result.student, out_dir / "model.bin");

  if (result.trace.aborted_step) {
    std::cout << "status=aborted aborted_step=" << *result.trace.aborted_step
              << " out_dir=" << out_dir.string() << "\n";
    return 1;
  }
  const StepRecord& last = result.trace.records.back();
  std::cout << "status=ok steps=" << result.trace.records.size()
            << " final_loss=" << fmt_double(last.loss)
            << " final_tar=" << fmt_double(last.tar) << " out_dir=" << out_dir.string()
            << "\n";
  return 0;
}

int cmd_study(const std::string& study, const fs::path& config_path,
              const std::vector<std::string>& overrides,
              const std::optional<std::string>& out_flag, int workers) {
  if (workers < 1) throw std::invalid_argument("--workers must be >= 1");
  if (study != "fixed-point" && study != "tar" && study != "landscape" &&
      study != "spec-sim")
    throw std::invalid_argument("unknown study '" + study +
                                "' (expected fixed-point | tar | landscape | spec-sim)");

  const ExperimentConfig cfg = load_config(config_path, overrides);
  const fs::path out_dir = resolve_out_dir(cfg.output_dir, out_flag);
  fs::create_directories(out_dir);
  const NGramModel teacher = cfg.make_teacher();

  if (study == "fixed-point") {
    // Convergence is a property of the raw objectives; the verifier is off.
    TrainingConfig base = cfg.training;
    base.verifier.reset();
    const FixedPointReport report = fixed_point_study(cfg.fixed_point.kinds, teacher, base);
    write_fixed_point_report(report, out_dir, cfg.seed);
    bool pass = report.max_mean_gap < cfg.fixed_point.gap_threshold;
    Scalar worst = 0.0;
    for (const auto& kr : report.kinds) {
      pass = pass && kr.mean_tv < cfg.fixed_point.tv_threshold;
      worst = std::max(worst, kr.mean_tv);
    }
    std::cout << "status=ok study=fixed-point verdict=" << (pass ? "pass" : "fail")
              << " worst_mean_tv=" << fmt_double(worst)
              << " max_mean_gap=" << fmt_double(report.max_mean_gap)
              << " out_dir=" << out_dir.string() << "\n";
    return pass ? 0 : 1;
  }

  if (study == "tar") {
    const TarStudyReport report =
        tar_study(cfg.training, teacher, cfg.make_student(teacher));
    write_tar_study_report(report, out_dir, cfg.seed);
    std::cout << "status=ok study=tar verdict=" << (report.verdict ? "pass" : "fail")
              << " initial_tar=" << fmt_double(report.initial_tar)
              << " final_tar=" << fmt_double(report.final_tar)
              << " max_drawdown=" << fmt_double(report.max_drawdown)
              << " slope=" << fmt_double(report.slope) << " out_dir=" << out_dir.string()
              << "\n";
    return report.verdict ? 0 : 1;
  }

  if (study == "landscape") {
    const TrainingResult result =
        run_training(cfg.training, teacher, cfg.make_student(teacher));
    Rng eval_rng = Rng(cfg.seed).split(0xE7A1);
    std::vector<Sequence> eval_data;
    for (int i = 0; i < cfg.landscape.eval_sequences; ++i) {
      const auto prompts = make_sim_prompts(1, cfg.training.prompt_length,
                                            teacher.vocab_size(), eval_rng);
      eval_data.push_back(generate(teacher, prompts[0], cfg.training.seq_length,
                                   GenMode::kSample, 1.0, eval_rng, Origin::kTeacher));
    }
    const Vec radii = Vec::LinSpaced(cfg.landscape.radius_steps, 0.0,
                                     cfg.landscape.radius_max);
    const LandscapeProbe probe =
        landscape_probe(result.student, teacher, cfg.training.divergence, eval_data,
                        cfg.landscape.n_directions, radii, Rng(cfg.seed).split(0xD1A).seed());
    write_landscape_report(probe, out_dir, cfg.seed);
    std::cout << "status=ok study=landscape base_loss=" << fmt_double(probe.base_loss)
              << " sharpness=" << fmt_double(probe.sharpness)
              << " out_dir=" << out_dir.string() << "\n";
    return 0;
  }

  // spec-sim
  Rng sim_rng = Rng(cfg.seed).split(0x5EC);
  const NGramModel drafter = cfg.spec_sim.drafter == "target"
                                 ? teacher
                                 : cfg.spec_sim.drafter == "file"
                                       ? load_model(cfg.spec_sim.drafter_file)
                                       : cfg.make_student(teacher);
  const auto prompts = make_sim_prompts(cfg.spec_sim.n_prompts, cfg.training.prompt_length,
                                        teacher.vocab_size(), sim_rng);
  const SpecSimReport report =
      spec_decode_sim(drafter, teacher, prompts, cfg.spec_sim.gamma, cfg.spec_sim.rounds,
                      cfg.spec_sim.cost_ratio, sim_rng, workers);
  write_spec_sim_report(report, out_dir, cfg.seed);
  std::cout << "status=ok study=spec-sim acceptance_rate="
            << fmt_double(report.acceptance_rate)
            << " speedup_estimate=" << fmt_double(report.speedup_estimate)
            << " out_dir=" << out_dir.string() << "\n";
  return 0;
}

}  // namespace selectkd::cli
