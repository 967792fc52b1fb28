// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <fstream>

namespace selectkd::cli {

namespace {

using nlohmann::json;

constexpr int kConfigVersion = 1;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("config: " + msg); }

void check_keys(const json& obj, const char* where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) fail(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) fail("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(std::string("bad value for '") + key + "'");
  }
}

DivergenceKind parse_divergence(const json& obj, const char* where) {
  check_keys(obj, where, {"kind", "alpha"});
  if (!obj.contains("kind")) fail(std::string(where) + " needs a 'kind'");
  std::optional<Scalar> alpha;
  if (obj.contains("alpha") && !obj.at("alpha").is_null()) alpha = obj.at("alpha").get<Scalar>();
  return DivergenceKind::parse(obj.at("kind").get<std::string>(), alpha);
}

Schedule parse_schedule(const json& value, const char* where) {
  if (value.is_number()) return Schedule::constant(value.get<Scalar>());
  if (!value.is_array()) fail(std::string(where) + " must be a number or [[frac,value],...]");
  std::vector<std::pair<Scalar, Scalar>> knots;
  for (const json& knot : value) {
    if (!knot.is_array() || knot.size() != 2)
      fail(std::string(where) + " knots must be [fraction, value] pairs");
    knots.emplace_back(knot[0].get<Scalar>(), knot[1].get<Scalar>());
  }
  return Schedule(knots);
}

void parse_training(const json& obj, TrainingConfig& cfg) {
  check_keys(obj, "training",
             {"divergence", "verifier", "mu", "alpha_t", "alpha_s", "steps", "batch_size",
              "seq_length", "prompt_length", "pool_size", "prompt_mode", "hard_targets",
              "optimizer"});
  if (obj.contains("divergence")) cfg.divergence = parse_divergence(obj.at("divergence"), "training.divergence");
  if (obj.contains("verifier")) {
    if (obj.at("verifier").is_null()) {
      cfg.verifier.reset();
    } else {
      const json& v = obj.at("verifier");
      check_keys(v, "training.verifier", {"mode", "k", "beta"});
      VerifierConfig vc;
      vc.mode = parse_verify_mode(get_or<std::string>(v, "mode", "spec-k"));
      vc.k = get_or<int>(v, "k", 5);
      vc.beta = get_or<Scalar>(v, "beta", 0.01);
      cfg.verifier = vc;
    }
  }
  cfg.mu = get_or<Scalar>(obj, "mu", cfg.mu);
  if (obj.contains("alpha_t")) cfg.alpha_t = parse_schedule(obj.at("alpha_t"), "training.alpha_t");
  if (obj.contains("alpha_s")) cfg.alpha_s = parse_schedule(obj.at("alpha_s"), "training.alpha_s");
  cfg.steps = get_or<int>(obj, "steps", cfg.steps);
  cfg.batch_size = get_or<int>(obj, "batch_size", cfg.batch_size);
  cfg.seq_length = get_or<int>(obj, "seq_length", cfg.seq_length);
  cfg.prompt_length = get_or<int>(obj, "prompt_length", cfg.prompt_length);
  cfg.pool_size = get_or<int>(obj, "pool_size", cfg.pool_size);
  const std::string pm = get_or<std::string>(obj, "prompt_mode", "random");
  if (pm == "random")
    cfg.prompt_mode = PromptMode::kRandom;
  else if (pm == "cycle")
    cfg.prompt_mode = PromptMode::kCycle;
  else
    fail("training.prompt_mode must be 'random' or 'cycle'");
  cfg.hard_targets = get_or<bool>(obj, "hard_targets", cfg.hard_targets);
  if (obj.contains("optimizer")) {
    const json& o = obj.at("optimizer");
    check_keys(o, "training.optimizer", {"kind", "lr", "beta1", "beta2", "eps", "lr_schedule"});
    const std::string kind = get_or<std::string>(o, "kind", "sgd");
    if (kind == "sgd") {
      cfg.optimizer.kind = OptimizerKind::kSgd;
      cfg.optimizer.lr = get_or<Scalar>(o, "lr", 0.5);
    } else if (kind == "adam") {
      cfg.optimizer.kind = OptimizerKind::kAdam;
      cfg.optimizer.lr = get_or<Scalar>(o, "lr", 0.05);
    } else {
      fail("training.optimizer.kind must be 'sgd' or 'adam'");
    }
    cfg.optimizer.beta1 = get_or<Scalar>(o, "beta1", cfg.optimizer.beta1);
    cfg.optimizer.beta2 = get_or<Scalar>(o, "beta2", cfg.optimizer.beta2);
    cfg.optimizer.eps = get_or<Scalar>(o, "eps", cfg.optimizer.eps);
    if (o.contains("lr_schedule") && !o.at("lr_schedule").is_null())
      cfg.optimizer.lr_schedule =
          parse_schedule(o.at("lr_schedule"), "training.optimizer.lr_schedule");
  }
}

}  // namespace

NGramModel ExperimentConfig::make_teacher() const {
  if (teacher.type == "file") return load_model(teacher.file);
  const std::uint64_t tseed =
      teacher.seed ? *teacher.seed : splitmix64(seed ^ 0x7EAC4E5EEDULL);
  if (teacher.noise_fraction) {
    return make_noisy_teacher(teacher.vocab_size, teacher.order, teacher.concentration,
                              *teacher.noise_fraction, teacher.noise_concentration, tseed)
        .noisy;
  }
  return random_teacher(teacher.vocab_size, teacher.order, teacher.concentration, tseed);
}

NGramModel ExperimentConfig::make_student(const NGramModel& teacher_model) const {
  if (student.init == "file") return load_model(student.file);
  return NGramModel::uniform(teacher_model.vocab_size(), teacher_model.order(),
                             teacher_model.bos_token());
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail("override must look like dotted.path=value: '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare strings are convenient: --set teacher.type=random
  }

  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) fail("override has an empty path segment: '" + assignment + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) fail("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    fail("malformed JSON in " + path.string() + ": " + e.what());
  }
  for (const std::string& o : overrides) apply_override(doc, o);

  check_keys(doc, "config",
             {"version", "seed", "output_dir", "teacher", "student", "training", "study"});
  if (!doc.contains("version") || !doc.at("version").is_number_integer() ||
      doc.at("version").get<int>() != kConfigVersion)
    fail("config must declare \"version\": 1");

  ExperimentConfig cfg;
  cfg.seed = get_or<std::uint64_t>(doc, "seed", cfg.seed);
  cfg.output_dir = get_or<std::string>(doc, "output_dir", cfg.output_dir.string());

  if (doc.contains("teacher")) {
    const json& t = doc.at("teacher");
    check_keys(t, "teacher",
               {"type", "vocab_size", "order", "concentration", "seed", "noise", "file"});
    cfg.teacher.type = get_or<std::string>(t, "type", cfg.teacher.type);
    if (cfg.teacher.type != "random" && cfg.teacher.type != "file")
      fail("teacher.type must be 'random' or 'file'");
    cfg.teacher.vocab_size = get_or<int>(t, "vocab_size", cfg.teacher.vocab_size);
    cfg.teacher.order = get_or<int>(t, "order", cfg.teacher.order);
    cfg.teacher.concentration = get_or<Scalar>(t, "concentration", cfg.teacher.concentration);
    if (t.contains("seed") && !t.at("seed").is_null())
      cfg.teacher.seed = t.at("seed").get<std::uint64_t>();
    if (t.contains("noise") && !t.at("noise").is_null()) {
      const json& n = t.at("noise");
      check_keys(n, "teacher.noise", {"fraction", "concentration"});
      cfg.teacher.noise_fraction = get_or<Scalar>(n, "fraction", 0.25);
      cfg.teacher.noise_concentration = get_or<Scalar>(n, "concentration", 0.05);
    }
    cfg.teacher.file = get_or<std::string>(t, "file", "");
    if (cfg.teacher.type == "file" && cfg.teacher.file.empty())
      fail("teacher.type 'file' needs teacher.file");
  }

  if (doc.contains("student")) {
    const json& s = doc.at("student");
    check_keys(s, "student", {"init", "file"});
    cfg.student.init = get_or<std::string>(s, "init", cfg.student.init);
    if (cfg.student.init != "uniform" && cfg.student.init != "file")
      fail("student.init must be 'uniform' or 'file'");
    cfg.student.file = get_or<std::string>(s, "file", "");
    if (cfg.student.init == "file" && cfg.student.file.empty())
      fail("student.init 'file' needs student.file");
  }

  cfg.training.seed = cfg.seed;
  if (doc.contains("training")) parse_training(doc.at("training"), cfg.training);
  cfg.training.seed = cfg.seed;  // the top-level seed drives the run
  cfg.training.validate();

  if (doc.contains("study")) {
    const json& st = doc.at("study");
    check_keys(st, "study", {"fixed_point", "landscape", "spec_sim"});
    if (st.contains("fixed_point")) {
      const json& fp = st.at("fixed_point");
      check_keys(fp, "study.fixed_point", {"kinds", "tv_threshold", "gap_threshold"});
      if (fp.contains("kinds")) {
        cfg.fixed_point.kinds.clear();
        for (const json& k : fp.at("kinds"))
          cfg.fixed_point.kinds.push_back(parse_divergence(k, "study.fixed_point.kinds[]"));
        if (cfg.fixed_point.kinds.empty()) fail("study.fixed_point.kinds must be nonempty");
      }
      cfg.fixed_point.tv_threshold =
          get_or<Scalar>(fp, "tv_threshold", cfg.fixed_point.tv_threshold);
      cfg.fixed_point.gap_threshold =
          get_or<Scalar>(fp, "gap_threshold", cfg.fixed_point.gap_threshold);
    }
    if (st.contains("landscape")) {
      const json& ls = st.at("landscape");
      check_keys(ls, "study.landscape",
                 {"n_directions", "radius_max", "radius_steps", "eval_sequences"});
      cfg.landscape.n_directions = get_or<int>(ls, "n_directions", cfg.landscape.n_directions);
      cfg.landscape.radius_max = get_or<Scalar>(ls, "radius_max", cfg.landscape.radius_max);
      cfg.landscape.radius_steps = get_or<int>(ls, "radius_steps", cfg.landscape.radius_steps);
      cfg.landscape.eval_sequences =
          get_or<int>(ls, "eval_sequences", cfg.landscape.eval_sequences);
      if (cfg.landscape.radius_steps < 2) fail("study.landscape.radius_steps must be >= 2");
      if (cfg.landscape.eval_sequences < 1) fail("study.landscape.eval_sequences must be >= 1");
    }
    if (st.contains("spec_sim")) {
      const json& ss = st.at("spec_sim");
      check_keys(ss, "study.spec_sim",
                 {"gamma", "rounds", "cost_ratio", "drafter", "drafter_file", "n_prompts"});
      cfg.spec_sim.gamma = get_or<int>(ss, "gamma", cfg.spec_sim.gamma);
      cfg.spec_sim.rounds = get_or<long>(ss, "rounds", cfg.spec_sim.rounds);
      cfg.spec_sim.cost_ratio = get_or<Scalar>(ss, "cost_ratio", cfg.spec_sim.cost_ratio);
      cfg.spec_sim.drafter = get_or<std::string>(ss, "drafter", cfg.spec_sim.drafter);
      if (cfg.spec_sim.drafter != "student" && cfg.spec_sim.drafter != "target" &&
          cfg.spec_sim.drafter != "file")
        fail("study.spec_sim.drafter must be 'student', 'target', or 'file'");
      cfg.spec_sim.drafter_file = get_or<std::string>(ss, "drafter_file", "");
      if (cfg.spec_sim.drafter == "file" && cfg.spec_sim.drafter_file.empty())
        fail("study.spec_sim.drafter 'file' needs drafter_file");
      cfg.spec_sim.n_prompts = get_or<int>(ss, "n_prompts", cfg.spec_sim.n_prompts);
      if (cfg.spec_sim.n_prompts < 1) fail("study.spec_sim.n_prompts must be >= 1");
    }
  }
  return cfg;
}

}  // namespace selectkd::cli
