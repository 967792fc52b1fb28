// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const char* kCli = SELECTKD_CLI_PATH;
const char* kConfigDir = SELECTKD_CONFIG_DIR;

struct RunResult {
  int exit_code;
  std::string out;
};

RunResult run_cli(const std::string& args) {
  const fs::path out_file = fs::temp_directory_path() / "selectkd_cli_out.txt";
  const std::string cmd =
      std::string(kCli) + " " + args + " > " + out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(out_file);
  std::string text((std::istreambuf_iterator<char>(is)), {});
  return {WEXITSTATUS(status), text};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string((std::istreambuf_iterator<char>(is)), {});
}

// Trace CSV with the wall_ms column blanked; wall time is the one field that
// legitimately differs between reruns.
std::string mask_wall_column(const std::string& csv) {
  std::istringstream is(csv);
  std::string line, out;
  while (std::getline(is, line)) {
    const std::size_t cut = line.rfind(',');
    out += line.substr(0, cut) + "\n";
  }
  return out;
}

fs::path fresh_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const json& doc) {
  const fs::path p = dir / "config.json";
  std::ofstream os(p);
  os << doc.dump(2);
  return p;
}

json small_config() {
  return json{{"version", 1},
              {"seed", 3},
              {"output_dir", "out"},
              {"teacher",
               {{"type", "random"}, {"vocab_size", 8}, {"order", 1}, {"concentration", 0.3}}},
              {"student", {{"init", "uniform"}}},
              {"training",
               {{"divergence", {{"kind", "fkl"}}},
                {"verifier", {{"mode", "spec-k"}, {"k", 3}, {"beta", 0.01}}},
                {"mu", 0.5},
                {"steps", 25},
                {"batch_size", 4},
                {"seq_length", 8},
                {"pool_size", 16},
                {"optimizer", {{"kind", "sgd"}, {"lr", 0.3}}}}}};
}

}  // namespace

TEST_CASE("gradcheck command follows the exit-code contract") {
  const fs::path dir = fresh_dir("selectkd_cli_gradcheck");
  const RunResult ok = run_cli("gradcheck --kind fkl --trials 50 --vocab 6 --seed 1 --out " +
                               (dir / "r.json").string());
  CHECK(ok.exit_code == 0);
  CHECK(ok.out.find("verdict=pass") != std::string::npos);
  const json report = json::parse(slurp(dir / "r.json"));
  CHECK(report.at("max_rel_error").get<double>() < 1e-6);

  CHECK(run_cli("gradcheck --kind skl --trials 10 --vocab 4").exit_code == 2);
  CHECK(run_cli("gradcheck --kind rkl --trials 0").exit_code == 2);
  CHECK(run_cli("gradcheck --kind fkl --alpha 0.1 --trials 10").exit_code == 2);
  CHECK(run_cli("gradcheck").exit_code == 2);
  CHECK(run_cli("bogus-subcommand").exit_code == 2);
}

TEST_CASE("train produces one trace row per step and is rerun-stable") {
  const fs::path dir = fresh_dir("selectkd_cli_train");
  const fs::path cfg = write_config(dir, small_config());

  const fs::path out1 = dir / "run1";
  const fs::path out2 = dir / "run2";
  const RunResult r1 = run_cli("train " + cfg.string() + " --out " + out1.string());
  const RunResult r2 = run_cli("train " + cfg.string() + " --out " + out2.string());
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(r1.out.find("final_loss=") != std::string::npos);
  CHECK(r1.out.find("final_tar=") != std::string::npos);
  CHECK(r1.out.find('\n') == r1.out.size() - 1);  // a single summary line

  const std::string csv1 = slurp(out1 / "trace.csv");
  std::istringstream lines(csv1);
  std::string line;
  int rows = -1;  // discount the header
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 25);
  CHECK(csv1.find("step,loss,tar,raw_div,alpha_t,alpha_s,wall_ms\n") == 0);
  CHECK(csv1.find('\r') == std::string::npos);  // LF endings only

  CHECK(mask_wall_column(csv1) == mask_wall_column(slurp(out2 / "trace.csv")));
  CHECK(slurp(out1 / "model.bin") == slurp(out2 / "model.bin"));
}

TEST_CASE("train honors SELECTKD_OUT and flag precedence") {
  const fs::path dir = fresh_dir("selectkd_cli_env");
  const fs::path cfg = write_config(dir, small_config());
  const fs::path env_dir = dir / "from_env";

  setenv("SELECTKD_OUT", env_dir.string().c_str(), 1);
  const RunResult r = run_cli("train " + cfg.string());
  unsetenv("SELECTKD_OUT");
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(env_dir / "trace.csv"));

  setenv("SELECTKD_OUT", (dir / "ignored").string().c_str(), 1);
  const fs::path flag_dir = dir / "from_flag";
  const RunResult rf = run_cli("train " + cfg.string() + " --out " + flag_dir.string());
  unsetenv("SELECTKD_OUT");
  REQUIRE(rf.exit_code == 0);
  CHECK(fs::exists(flag_dir / "trace.csv"));
  CHECK_FALSE(fs::exists(dir / "ignored"));
}

TEST_CASE("config schema is strict") {
  const fs::path dir = fresh_dir("selectkd_cli_schema");
  json bad = small_config();
  bad["typo_key"] = 1;
  CHECK(run_cli("train " + write_config(dir, bad).string()).exit_code == 2);

  json bad_nested = small_config();
  bad_nested["training"]["verifierr"] = nullptr;
  CHECK(run_cli("train " + write_config(dir, bad_nested).string()).exit_code == 2);

  json no_version = small_config();
  no_version.erase("version");
  CHECK(run_cli("train " + write_config(dir, no_version).string()).exit_code == 2);

  CHECK(run_cli("train /nonexistent/config.json").exit_code == 2);

  std::ofstream(dir / "garbage.json") << "{not json";
  CHECK(run_cli("train " + (dir / "garbage.json").string()).exit_code == 2);
}

TEST_CASE("mu extremes are visible in the JSON trace origins") {
  const fs::path dir = fresh_dir("selectkd_cli_mu");
  const fs::path cfg = write_config(dir, small_config());

  const RunResult off = run_cli("train " + cfg.string() + " --set training.mu=0 --out " +
                                (dir / "off").string());
  const RunResult on = run_cli("train " + cfg.string() + " --set training.mu=1 --out " +
                               (dir / "on").string());
  REQUIRE(off.exit_code == 0);
  REQUIRE(on.exit_code == 0);
  const json toff = json::parse(slurp(dir / "off" / "trace.json"));
  const json ton = json::parse(slurp(dir / "on" / "trace.json"));
  for (const json& rec : toff.at("records")) CHECK(rec.at("origin") == "teacher");
  for (const json& rec : ton.at("records")) CHECK(rec.at("origin") == "student");
}

TEST_CASE("study command dispatch and determinism") {
  const fs::path dir = fresh_dir("selectkd_cli_study");
  json cfg_json = small_config();
  cfg_json["study"] = {{"spec_sim",
                        {{"gamma", 2}, {"rounds", 3000}, {"drafter", "target"}}}};
  const fs::path cfg = write_config(dir, cfg_json);

  CHECK(run_cli("study nonsense " + cfg.string()).exit_code == 2);

  const fs::path s1 = dir / "s1";
  const fs::path s2 = dir / "s2";
  REQUIRE(run_cli("study spec-sim " + cfg.string() + " --out " + s1.string()).exit_code == 0);
  REQUIRE(run_cli("study spec-sim " + cfg.string() + " --out " + s2.string()).exit_code == 0);
  CHECK(slurp(s1 / "spec-sim-3.json") == slurp(s2 / "spec-sim-3.json"));
  CHECK(slurp(s1 / "spec-sim-3.csv") == slurp(s2 / "spec-sim-3.csv"));

  const json report = json::parse(slurp(s1 / "spec-sim-3.json"));
  CHECK(report.at("acceptance_rate").get<double>() == 1.0);  // drafter == target

  // The tar study on the shipped default config passes and emits artifacts.
  const fs::path tar_dir = dir / "tar";
  const RunResult tar_run = run_cli(std::string("study tar ") + kConfigDir +
                                    "/default.json --set training.steps=120 --out " +
                                    tar_dir.string());
  REQUIRE(tar_run.exit_code == 0);
  CHECK(fs::exists(tar_dir / "tar-1.json"));
  CHECK(fs::exists(tar_dir / "tar-1.csv"));
}
