// Experiment front end: dataset generation, weak-teacher training, CSL runs,
// and the capability-gap / supervisor-count sweeps. Driven by a JSON config;
// any config key can be overridden on the command line with --key value
// (dotted paths, e.g. --csl.levels 2).

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "csl/dataset.hpp"
#include "csl/error.hpp"
#include "csl/hierarchy.hpp"
#include "csl/pipeline.hpp"
#include "csl/probe.hpp"
#include "csl/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
  return json{
      {"dataset", {{"synthetic", json::object()}}},
      {"hierarchy", {{"class_branching", {2, 4, 8}}, {"shuffle_classes", false}}},
      {"csl",
       {{"levels", 3},
        {"label_mode", "hard"},
        {"train_fraction", 0.8},
        {"warm_start", false},
        {"denoise_enabled", true},
        {"denoise",
         {{"agreement_k", 3},
          {"apply_teacher_student", true},
          {"apply_local_global", true},
          {"min_kept_fraction", 0.2}}},
        {"student_train",
         {{"epochs", 30},
          {"batch_size", 32},
          {"learning_rate", 0.02},
          {"momentum", 0.9},
          {"soft_temperature", 1.0}}},
        {"teacher_train",
         {{"epochs", 20},
          {"batch_size", 32},
          {"learning_rate", 0.2},
          {"momentum", 0.9},
          {"soft_temperature", 1.0}}}}},
      {"gap_truncations", {5, 20, 80, 400}},
      {"normalize_features", false},
      {"seeds", {0, 1, 2}},
      {"output_dir", "csl-out"},
  };
}

void merge_into(json& base, const json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], *it);
    } else {
      base[it.key()] = *it;
    }
  }
}

// "--csl.levels 2" style overrides applied onto the JSON tree.
void apply_overrides(json& config, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); i += 2) {
    std::string key = extras[i];
    if (key.rfind("--", 0) != 0 || i + 1 >= extras.size()) {
      throw csl::DataError("override must look like --key value, got '" + key + "'");
    }
    key = key.substr(2);
    std::replace(key.begin(), key.end(), '.', '/');
    json value;
    try {
      value = json::parse(extras[i + 1]);
    } catch (const json::parse_error&) {
      value = extras[i + 1];  // bare string
    }
    config[json::json_pointer("/" + key)] = value;
  }
}

csl::SynthSpec synth_from_json(const json& j) {
  csl::SynthSpec s;
  s.classes = j.value("classes", s.classes);
  s.domains = j.value("domains", s.domains);
  s.samples_per_class_per_domain =
      j.value("samples_per_class_per_domain", s.samples_per_class_per_domain);
  s.strong_dim = j.value("strong_dim", s.strong_dim);
  s.weak_dim = j.value("weak_dim", s.weak_dim);
  s.class_margin = j.value("class_margin", s.class_margin);
  s.weak_noise_sigma = j.value("weak_noise_sigma", s.weak_noise_sigma);
  s.strong_noise_sigma = j.value("strong_noise_sigma", s.strong_noise_sigma);
  s.corruption_rate = j.value("corruption_rate", s.corruption_rate);
  s.seed = j.value("seed", s.seed);
  return s;
}

csl::TrainConfig train_from_json(const json& j) {
  csl::TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.soft_temperature = j.value("soft_temperature", c.soft_temperature);
  if (j.contains("max_steps") && !j["max_steps"].is_null()) {
    c.max_steps = j["max_steps"].get<long>();
  }
  return c;
}

csl::CslConfig csl_from_json(const json& j, std::uint64_t seed) {
  csl::CslConfig c;
  c.levels = j.value("levels", c.levels);
  const std::string mode = j.value("label_mode", "hard");
  if (mode != "hard" && mode != "soft") throw csl::DataError("label_mode must be hard|soft");
  c.label_mode = mode == "hard" ? csl::LabelMode::Hard : csl::LabelMode::Soft;
  c.student_train = train_from_json(j.value("student_train", json::object()));
  c.teacher_train = train_from_json(j.value("teacher_train", json::object()));
  const json dj = j.value("denoise", json::object());
  c.denoise.agreement_k = dj.value("agreement_k", c.denoise.agreement_k);
  c.denoise.apply_teacher_student =
      dj.value("apply_teacher_student", c.denoise.apply_teacher_student);
  c.denoise.apply_local_global = dj.value("apply_local_global", c.denoise.apply_local_global);
  c.denoise.min_kept_fraction = dj.value("min_kept_fraction", c.denoise.min_kept_fraction);
  c.denoise_enabled = j.value("denoise_enabled", c.denoise_enabled);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.warm_start = j.value("warm_start", c.warm_start);
  c.seed = seed;
  return c;
}

void normalize_rows(csl::EmbeddingDataset& ds) {
  for (std::size_t i = 0; i < ds.rows; ++i) {
    double norm = 0.0;
    float* row = ds.features.data() + i * ds.dim;
    for (std::size_t j = 0; j < ds.dim; ++j) norm += double(row[j]) * row[j];
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (std::size_t j = 0; j < ds.dim; ++j) {
        row[j] = static_cast<float>(row[j] / norm);
      }
    }
  }
}

struct DatasetPair {
  csl::EmbeddingDataset strong;
  csl::EmbeddingDataset weak;
};

DatasetPair load_pair(const json& config) {
  const json& dj = config.at("dataset");
  DatasetPair pair;
  if (dj.contains("synthetic") == dj.contains("strong_path")) {
    throw csl::DataError("dataset must name exactly one source: synthetic | strong/weak paths");
  }
  if (dj.contains("synthetic")) {
    csl::SynthResult r = csl::generate(synth_from_json(dj["synthetic"]));
    pair.strong = std::move(r.strong);
    pair.weak = std::move(r.weak);
  } else {
    pair.strong = csl::load_dataset(dj.at("strong_path").get<std::string>(),
                                    csl::FileFormat::Binary);
    pair.weak =
        csl::load_dataset(dj.at("weak_path").get<std::string>(), csl::FileFormat::Binary);
  }
  if (config.value("normalize_features", false)) {
    normalize_rows(pair.strong);
    normalize_rows(pair.weak);
  }
  return pair;
}

std::vector<std::vector<csl::Scope>> scopes_from_json(const json& config,
                                                      const DatasetPair& pair) {
  const json& hj = config.at("hierarchy");
  if (hj.contains("class_branching")) {
    std::optional<std::uint64_t> shuffle;
    if (hj.value("shuffle_classes", false)) {
      shuffle = hj.value("shuffle_seed", std::uint64_t{0});
    }
    return csl::build_class_partition_levels(pair.strong.class_count,
                                             hj["class_branching"].get<std::vector<int>>(),
                                             shuffle);
  }
  if (hj.contains("domain_groups")) {
    return csl::build_domain_group_levels(
        pair.strong.domain_count,
        hj["domain_groups"].get<std::vector<std::vector<std::vector<std::uint32_t>>>>());
  }
  throw csl::DataError("hierarchy must give class_branching or domain_groups");
}

std::string output_dir(const json& config) {
  if (config.contains("output_dir")) return config["output_dir"].get<std::string>();
  if (const char* env = std::getenv("CSL_OUTPUT_DIR")) return env;
  return "csl-out";
}

csl::SupervisorHierarchy hierarchy_for_seed(const json& config, const DatasetPair& pair,
                                            const csl::DatasetSplit& split, std::uint64_t seed,
                                            const std::string& out) {
  const std::string dir = out + "/hierarchy_seed" + std::to_string(seed);
  if (fs::exists(fs::path(dir) / "hierarchy.manifest")) return csl::load_hierarchy(dir);
  csl::CslConfig cc = csl_from_json(config.at("csl"), seed);
  csl::TrainConfig tc = cc.teacher_train;
  tc.seed = seed;
  auto weak_train = csl::view_from_indices(pair.weak, split.train_indices);
  return csl::train_hierarchy(weak_train, scopes_from_json(config, pair), tc);
}

// Dispatches fn(seed) over a bounded worker pool; results keep seed order.
void for_each_seed(const std::vector<std::uint64_t>& seeds, int jobs,
                   const std::function<void(std::uint64_t)>& fn) {
  if (jobs <= 1) {
    for (std::uint64_t s : seeds) fn(s);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= seeds.size() || first_error) return;
          i = next++;
        }
        try {
          fn(seeds[i]);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

int cmd_gen(const json& config) {
  const std::string out = output_dir(config);
  fs::create_directories(out);
  const json& dj = config.at("dataset");
  if (!dj.contains("synthetic")) throw csl::DataError("gen requires a synthetic dataset source");
  csl::SynthSpec spec = synth_from_json(dj["synthetic"]);
  csl::SynthResult r = csl::generate(spec);
  csl::save_dataset(r.strong, out + "/strong.bin", csl::FileFormat::Binary);
  csl::save_dataset(r.weak, out + "/weak.bin", csl::FileFormat::Binary);
  json manifest = {{"strong", "strong.bin"},
                   {"weak", "weak.bin"},
                   {"rows", r.strong.rows},
                   {"classes", r.strong.class_count},
                   {"domains", r.strong.domain_count},
                   {"spec", dj["synthetic"]},
                   {"spec_hash", spec.hash()}};
  std::ofstream os(out + "/gen_manifest.json");
  os << manifest.dump(2) << "\n";
  std::cout << "wrote " << out << "/strong.bin, weak.bin, gen_manifest.json\n";
  return 0;
}

int cmd_train_weak(const json& config, int jobs) {
  const std::string out = output_dir(config);
  fs::create_directories(out);
  DatasetPair pair = load_pair(config);
  const auto seeds = config.at("seeds").get<std::vector<std::uint64_t>>();
  for_each_seed(seeds, jobs, [&](std::uint64_t seed) {
    csl::CslConfig cc = csl_from_json(config.at("csl"), seed);
    auto split = csl::split_dataset(pair.weak, cc.train_fraction, seed);
    csl::TrainConfig tc = cc.teacher_train;
    tc.seed = seed;
    auto weak_train = csl::view_from_indices(pair.weak, split.train_indices);
    auto hier = csl::train_hierarchy(weak_train, scopes_from_json(config, pair), tc);
    csl::save_hierarchy(hier, out + "/hierarchy_seed" + std::to_string(seed));
  });
  std::cout << "wrote hierarchy manifests under " << out << "\n";
  return 0;
}

int cmd_run(const json& config, const std::string& mode, int jobs) {
  if (mode != "vanilla" && mode != "csl" && mode != "both") {
    throw csl::DataError("run --mode must be vanilla|csl|both");
  }
  const std::string out = output_dir(config);
  fs::create_directories(out);
  DatasetPair pair = load_pair(config);
  const auto seeds = config.at("seeds").get<std::vector<std::uint64_t>>();
  std::mutex mu;
  std::map<std::uint64_t, std::vector<std::pair<double, csl::PgrReport>>> rows;
  for_each_seed(seeds, jobs, [&](std::uint64_t seed) {
    csl::CslConfig cc = csl_from_json(config.at("csl"), seed);
    auto split = csl::split_dataset(pair.weak, cc.train_fraction, seed);
    auto hier = hierarchy_for_seed(config, pair, split, seed, out);
    std::vector<std::pair<double, csl::PgrReport>> local;
    if (mode != "csl") {
      auto run = csl::run_vanilla(pair.strong, pair.weak, hier.levels[0][0], split, cc);
      csl::write_report(run.report, config, seed, jobs,
                        out + "/report_vanilla_seed" + std::to_string(seed) + ".json");
      local.emplace_back(1.0, run.report);
    }
    if (mode != "vanilla") {
      cc.levels = std::min<int>(cc.levels, static_cast<int>(hier.depth()) - 1);
      auto run = csl::run_csl(pair.strong, pair.weak, hier, split, cc);
      csl::write_report(run.report, config, seed, jobs,
                        out + "/report_csl_seed" + std::to_string(seed) + ".json");
      local.emplace_back(
          static_cast<double>(hier.levels[static_cast<std::size_t>(cc.levels)].size()),
          run.report);
    }
    std::lock_guard lock(mu);
    rows[seed] = std::move(local);
  });
  std::ofstream csv(out + "/runs.csv");
  csl::append_sweep_csv_header(csv);
  for (const auto& [seed, entries] : rows) {
    csl::SweepResult one;
    one.seed = seed;
    for (const auto& [param, report] : entries) one.entries.push_back({param, report});
    csl::append_sweep_csv(csv, one);
  }
  std::cout << "wrote " << out << "/runs.csv\n";
  return 0;
}

int cmd_sweep(const json& config, const std::string& kind, const std::string& assign_mode,
              int jobs) {
  if (kind != "gap" && kind != "count") throw csl::DataError("sweep --kind must be gap|count");
  const std::string out = output_dir(config);
  fs::create_directories(out);
  DatasetPair pair = load_pair(config);
  const auto seeds = config.at("seeds").get<std::vector<std::uint64_t>>();
  std::mutex mu;
  std::map<std::uint64_t, std::vector<csl::SweepResult>> results;
  for_each_seed(seeds, jobs, [&](std::uint64_t seed) {
    csl::CslConfig cc = csl_from_json(config.at("csl"), seed);
    auto split = csl::split_dataset(pair.weak, cc.train_fraction, seed);
    std::vector<csl::SweepResult> local;
    if (kind == "gap") {
      auto truncations = config.value("gap_truncations", std::vector<long>{5, 20, 80, 400});
      local.push_back(
          csl::capability_gap_sweep(pair.strong, pair.weak, split, truncations, cc));
    } else {
      auto hier = hierarchy_for_seed(config, pair, split, seed, out);
      auto run_mode = [&](csl::AssignMode m) {
        local.push_back(
            csl::supervisor_count_sweep(pair.strong, pair.weak, hier, m, split, cc));
      };
      if (assign_mode == "oracle" || assign_mode == "both") run_mode(csl::AssignMode::Oracle);
      if (assign_mode == "learned" || assign_mode == "both") run_mode(csl::AssignMode::Learned);
      if (local.empty()) throw csl::DataError("--assign must be oracle|learned|both");
    }
    std::lock_guard lock(mu);
    results[seed] = std::move(local);
  });
  const std::string path = out + "/sweep_" + kind + ".csv";
  std::ofstream csv(path);
  csv << "kind,";
  csl::append_sweep_csv_header(csv);
  for (const auto& [seed, list] : results) {
    for (const auto& result : list) {
      std::ostringstream block;
      csl::append_sweep_csv(block, result);
      std::istringstream lines(block.str());
      std::string line;
      while (std::getline(lines, line)) csv << result.kind << ',' << line << "\n";
    }
  }
  std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co-supervised weak-to-strong experiment harness"};
  app.require_subcommand(1);
  std::string config_path;
  int jobs = 1;
  app.add_option("-c,--config", config_path, "JSON experiment config");
  app.add_option("-j,--jobs", jobs, "worker pool size for seeds/sweep points")
      ->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen", "generate synthetic datasets");
  auto* train_weak = app.add_subcommand("train-weak", "train and serialize the teacher hierarchy");
  auto* run = app.add_subcommand("run", "run vanilla and CSL pipelines per seed");
  std::string mode = "both";
  run->add_option("--mode", mode, "vanilla|csl|both");
  auto* sweep = app.add_subcommand("sweep", "capability-gap or supervisor-count sweep");
  std::string kind = "gap";
  std::string assign_mode = "both";
  sweep->add_option("--kind", kind, "gap|count");
  sweep->add_option("--assign", assign_mode, "oracle|learned|both (count sweep)");
  for (auto* sc : {gen, train_weak, run, sweep}) sc->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    json config = default_config();
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      if (!is) throw csl::DataError("cannot open config '" + config_path + "'");
      json user = json::parse(is);
      merge_into(config, user);
    }
    CLI::App* sub = app.get_subcommands().front();
    apply_overrides(config, sub->remaining());
    if (sub == gen) return cmd_gen(config);
    if (sub == train_weak) return cmd_train_weak(config, jobs);
    if (sub == run) return cmd_run(config, mode, jobs);
    return cmd_sweep(config, kind, assign_mode, jobs);
  } catch (const csl::DataError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
