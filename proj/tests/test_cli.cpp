#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(CSL_CLI_PATH) + " " + args + " >" + out.string() + " 2>" +
                          err.string();
  int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// A deliberately small experiment so every command finishes in well under a second.
json small_config(const fs::path& out_dir) {
  return json{
      {"dataset",
       {{"synthetic",
         {{"classes", 8},
          {"domains", 2},
          {"samples_per_class_per_domain", 10},
          {"strong_dim", 32},
          {"weak_dim", 6},
          {"class_margin", 25.0},
          {"weak_noise_sigma", 3.0},
          {"strong_noise_sigma", 0.3},
          {"seed", 7}}}}},
      {"hierarchy", {{"class_branching", {2}}}},
      {"csl",
       {{"levels", 1},
        {"student_train", {{"epochs", 10}, {"learning_rate", 0.05}}},
        {"teacher_train", {{"epochs", 10}, {"learning_rate", 0.2}}}}},
      {"seeds", {0}},
      {"output_dir", out_dir.string()},
  };
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("csl_cli_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path config(const json& j) const {
    const fs::path p = path / "config.json";
    std::ofstream os(p);
    os << j.dump(2);
    return p;
  }
};

}  // namespace

TEST_CASE("gen writes both datasets and a manifest, deterministically") {
  TempDir tmp;
  const fs::path cfg = tmp.config(small_config(tmp.path / "out"));
  CliResult r = run_cli("-c " + cfg.string() + " gen", tmp.path);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(tmp.path / "out/strong.bin"));
  REQUIRE(fs::exists(tmp.path / "out/weak.bin"));
  json manifest = json::parse(std::ifstream(tmp.path / "out/gen_manifest.json"));
  REQUIRE(manifest["rows"] == 8 * 2 * 10);
  REQUIRE(manifest["classes"] == 8);
  REQUIRE(manifest["domains"] == 2);
  REQUIRE(manifest.contains("spec_hash"));

  const std::string strong_bytes = slurp(tmp.path / "out/strong.bin");
  const std::string weak_bytes = slurp(tmp.path / "out/weak.bin");
  REQUIRE(run_cli("-c " + cfg.string() + " gen", tmp.path).exit_code == 0);
  REQUIRE(slurp(tmp.path / "out/strong.bin") == strong_bytes);
  REQUIRE(slurp(tmp.path / "out/weak.bin") == weak_bytes);
}

TEST_CASE("gen rejects an invalid spec with exit code 1 and a diagnostic") {
  TempDir tmp;
  const fs::path cfg = tmp.config(small_config(tmp.path / "out"));
  CliResult r = run_cli(
      "-c " + cfg.string() + " gen --dataset.synthetic.weak_dim 32", tmp.path);
  REQUIRE(r.exit_code == 1);
  REQUIRE_FALSE(r.err.empty());
}

TEST_CASE("train-weak serializes a hierarchy reproducibly") {
  TempDir tmp;
  const fs::path cfg = tmp.config(small_config(tmp.path / "out"));
  CliResult r = run_cli("-c " + cfg.string() + " train-weak", tmp.path);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  const fs::path manifest = tmp.path / "out/hierarchy_seed0/hierarchy.manifest";
  REQUIRE(fs::exists(manifest));
  const std::string manifest_bytes = slurp(manifest);
  // One head file per supervisor: generalist plus the level of 2.
  std::size_t heads = 0;
  for (const auto& e : fs::directory_iterator(tmp.path / "out/hierarchy_seed0")) {
    if (e.path().filename().string().rfind("head_", 0) == 0) ++heads;
  }
  REQUIRE(heads == 3);

  REQUIRE(run_cli("-c " + cfg.string() + " train-weak", tmp.path).exit_code == 0);
  REQUIRE(slurp(manifest) == manifest_bytes);
}

TEST_CASE("train-weak fails cleanly when a dataset path is missing") {
  TempDir tmp;
  json cfg_json = small_config(tmp.path / "out");
  cfg_json["dataset"] = {{"strong_path", (tmp.path / "absent.bin").string()},
                         {"weak_path", (tmp.path / "absent2.bin").string()}};
  const fs::path cfg = tmp.config(cfg_json);
  CliResult r = run_cli("-c " + cfg.string() + " train-weak", tmp.path);
  REQUIRE(r.exit_code != 0);
  REQUIRE_FALSE(r.err.empty());
}

TEST_CASE("run produces per-seed reports and the aggregate CSV") {
  TempDir tmp;
  json cfg_json = small_config(tmp.path / "out");
  cfg_json["seeds"] = {0, 1, 2};
  const fs::path cfg = tmp.config(cfg_json);
  CliResult r = run_cli("-c " + cfg.string() + " run --mode vanilla", tmp.path);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  for (int s : {0, 1, 2}) {
    REQUIRE(fs::exists(tmp.path / ("out/report_vanilla_seed" + std::to_string(s) + ".json")));
  }
  std::ifstream csv(tmp.path / "out/runs.csv");
  std::string line;
  std::getline(csv, line);
  REQUIRE(line == "param,seed,s_weak,s,s_ceiling,pgr");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  REQUIRE(rows == 3);
}

TEST_CASE("vanilla mode and a one-level full-scope CSL agree exactly") {
  TempDir tmp;
  json cfg_json = small_config(tmp.path / "out");
  cfg_json["hierarchy"]["class_branching"] = {1};
  cfg_json["csl"]["denoise_enabled"] = false;
  const fs::path cfg = tmp.config(cfg_json);
  CliResult r = run_cli("-c " + cfg.string() + " run --mode both", tmp.path);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  json vanilla = json::parse(std::ifstream(tmp.path / "out/report_vanilla_seed0.json"));
  json csl = json::parse(std::ifstream(tmp.path / "out/report_csl_seed0.json"));
  REQUIRE(vanilla["payload"]["report"]["pgr"] == csl["payload"]["report"]["pgr"]);
  REQUIRE(vanilla["payload"]["report"]["s_student"] == csl["payload"]["report"]["s_student"]);
}

TEST_CASE("rerunning with the same config and seed keeps the payload byte-identical") {
  TempDir tmp;
  const fs::path cfg = tmp.config(small_config(tmp.path / "out"));
  REQUIRE(run_cli("-c " + cfg.string() + " -j 1 run --mode csl", tmp.path).exit_code == 0);
  json first = json::parse(std::ifstream(tmp.path / "out/report_csl_seed0.json"));
  REQUIRE(run_cli("-c " + cfg.string() + " -j 1 run --mode csl", tmp.path).exit_code == 0);
  json second = json::parse(std::ifstream(tmp.path / "out/report_csl_seed0.json"));
  REQUIRE(first["payload"].dump() == second["payload"].dump());
}

TEST_CASE("run rejects an unknown mode") {
  TempDir tmp;
  const fs::path cfg = tmp.config(small_config(tmp.path / "out"));
  CliResult r = run_cli("-c " + cfg.string() + " run --mode bogus", tmp.path);
  REQUIRE(r.exit_code == 1);
  REQUIRE_FALSE(r.err.empty());
}

TEST_CASE("gap sweep writes one row per truncation per seed") {
  TempDir tmp;
  json cfg_json = small_config(tmp.path / "out");
  cfg_json["gap_truncations"] = {10, 1000};
  const fs::path cfg = tmp.config(cfg_json);
  CliResult r = run_cli("-c " + cfg.string() + " sweep --kind gap", tmp.path);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  std::ifstream csv(tmp.path / "out/sweep_gap.csv");
  std::string line;
  std::getline(csv, line);
  REQUIRE(line == "kind,param,seed,s_weak,s,s_ceiling,pgr");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    REQUIRE(line.rfind("gap,", 0) == 0);
    ++rows;
  }
  REQUIRE(rows == 2);
}

TEST_CASE("count sweep emits oracle and learned blocks") {
  TempDir tmp;
  const fs::path cfg = tmp.config(small_config(tmp.path / "out"));
  CliResult r = run_cli("-c " + cfg.string() + " sweep --kind count --assign both", tmp.path);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  std::ifstream csv(tmp.path / "out/sweep_count.csv");
  std::string line;
  std::getline(csv, line);  // header
  std::size_t oracle_rows = 0, learned_rows = 0;
  while (std::getline(csv, line)) {
    if (line.rfind("count-oracle,", 0) == 0) ++oracle_rows;
    if (line.rfind("count-learned,", 0) == 0) ++learned_rows;
  }
  REQUIRE(oracle_rows == 2);  // generalist entry + the level of 2
  REQUIRE(learned_rows == 2);
}

TEST_CASE("unknown sweep kind is a usage error") {
  TempDir tmp;
  const fs::path cfg = tmp.config(small_config(tmp.path / "out"));
  CliResult r = run_cli("-c " + cfg.string() + " sweep --kind nope", tmp.path);
  REQUIRE(r.exit_code == 1);
  REQUIRE_FALSE(r.err.empty());
}

TEST_CASE("a missing subcommand or config file fails with exit code 1") {
  TempDir tmp;
  REQUIRE(run_cli("", tmp.path).exit_code == 1);
  CliResult r = run_cli("-c " + (tmp.path / "nope.json").string() + " gen", tmp.path);
  REQUIRE(r.exit_code == 1);
  REQUIRE_FALSE(r.err.empty());
}

TEST_CASE("command-line overrides reach the config tree") {
  TempDir tmp;
  const fs::path cfg = tmp.config(small_config(tmp.path / "out"));
  CliResult r = run_cli("-c " + cfg.string() +
                            " gen --dataset.synthetic.samples_per_class_per_domain 5",
                        tmp.path);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  json manifest = json::parse(std::ifstream(tmp.path / "out/gen_manifest.json"));
  REQUIRE(manifest["rows"] == 8 * 2 * 5);
}
