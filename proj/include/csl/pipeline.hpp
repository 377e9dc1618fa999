#pragma once

#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <numeric>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csl/assignment.hpp"
#include "csl/dataset.hpp"
#include "csl/denoise.hpp"
#include "csl/error.hpp"
#include "csl/hierarchy.hpp"
#include "csl/probe.hpp"

namespace csl {

struct CslConfig {
  int levels = 1;  // specialist rounds to run; hierarchy depth must be >= levels+1
  LabelMode label_mode = LabelMode::Hard;
  TrainConfig student_train;
  TrainConfig teacher_train;
  DenoiseConfig denoise;
  bool denoise_enabled = true;
  AssignmentPrior prior;
  double train_fraction = 0.8;
  bool warm_start = false;        // reuse the previous round's student as init
  bool oracle_assignment = false;  // ground-truth assignment instead of the posterior
  std::uint64_t seed = 0;

  std::uint64_t student_seed() const { return mix_seed(seed, 0x57d); }
};

struct RoundDiagnostics {
  int level = 0;
  std::size_t supervisor_count = 0;
  double assignment_accuracy = 0.0;  // vs the ground-truth oracle
  double kept_fraction = 1.0;
  double student_top1 = 0.0;
  bool relaxed_local_global = false;
  bool relaxed_teacher_student = false;
};

struct PgrReport {
  double s_weak = 0.0;     // weak supervisor eval accuracy
  double s_student = 0.0;  // fine-tuned student eval accuracy
  double s_ceiling = 0.0;  // clean-label ceiling eval accuracy
  double pgr = 0.0;
  std::vector<RoundDiagnostics> rounds;
};

inline double pgr(double s, double s_weak, double s_ceiling) {
  if (s_ceiling == s_weak) {
    throw DataError("PGR undefined: ceiling equals weak performance (zero gap)");
  }
  return (s - s_weak) / (s_ceiling - s_weak);
}

struct CslRun {
  LinearHead student;
  PgrReport report;
};

namespace detail {

struct SplitViews {
  DatasetView strong_train, strong_eval, weak_train, weak_eval;
};

inline SplitViews make_views(const EmbeddingDataset& strong, const EmbeddingDataset& weak,
                             const DatasetSplit& split) {
  if (strong.rows != weak.rows) {
    throw DataError("strong and weak datasets must be row-aligned");
  }
  SplitViews v;
  v.strong_train = view_from_indices(strong, split.train_indices);
  v.strong_eval = view_from_indices(strong, split.eval_indices);
  v.weak_train = view_from_indices(weak, split.train_indices);
  v.weak_eval = view_from_indices(weak, split.eval_indices);
  return v;
}

inline TrainConfig student_config(const CslConfig& config) {
  TrainConfig c = config.student_train;
  c.seed = config.student_seed();
  c.label_mode = config.label_mode;
  return c;
}

inline double ceiling_accuracy(const SplitViews& v, const CslConfig& config) {
  TrainConfig c = student_config(config);
  c.label_mode = LabelMode::Hard;
  LinearHead ceiling = train_probe(v.strong_train, Targets::from_labels(v.strong_train), c);
  return evaluate_topk(ceiling, v.strong_eval, 1);
}

inline LinearHead train_student(const DatasetView& strong_rows, const Targets& targets,
                                const CslConfig& config, const LinearHead* warm_init) {
  TrainConfig c = student_config(config);
  return train_probe(strong_rows, targets, c, config.warm_start ? warm_init : nullptr);
}

}  // namespace detail

// Vanilla weak-to-strong baseline: student fine-tuned on the generalist's
// annotations of the train split, scored against the weak teacher and the
// clean-label ceiling on the eval split.
inline CslRun run_vanilla(const EmbeddingDataset& strong, const EmbeddingDataset& weak,
                          const Supervisor& generalist, const DatasetSplit& split,
                          const CslConfig& config,
                          std::optional<double> precomputed_ceiling = std::nullopt) {
  auto v = detail::make_views(strong, weak, split);
  const double temp = config.student_train.soft_temperature;
  AnnotatedSet ann = annotate(generalist, v.weak_train, config.label_mode, temp);
  CslRun run;
  run.student =
      detail::train_student(v.strong_train, targets_from_annotations(ann), config, nullptr);
  run.report.s_weak = evaluate_topk(generalist.head, v.weak_eval, 1);
  run.report.s_student = evaluate_topk(run.student, v.strong_eval, 1);
  run.report.s_ceiling =
      precomputed_ceiling ? *precomputed_ceiling : detail::ceiling_accuracy(v, config);
  run.report.pgr = pgr(run.report.s_student, run.report.s_weak, run.report.s_ceiling);
  RoundDiagnostics diag;
  diag.level = 0;
  diag.supervisor_count = 1;
  diag.assignment_accuracy = 1.0;
  diag.student_top1 = run.report.s_student;
  run.report.rounds.push_back(diag);
  return run;
}

// One round of co-supervision at a given hierarchy level: annotate with every
// specialist, assign by posterior against the previous student, optionally
// denoise in two phases, retrain the student on the kept set.
inline CslRun run_csl(const EmbeddingDataset& strong, const EmbeddingDataset& weak,
                      const SupervisorHierarchy& hier, const DatasetSplit& split,
                      const CslConfig& config,
                      std::optional<double> precomputed_ceiling = std::nullopt) {
  if (config.levels < 1) throw DataError("run_csl: levels must be >= 1");
  if (hier.depth() < static_cast<std::size_t>(config.levels) + 1) {
    throw DataError("run_csl: hierarchy depth " + std::to_string(hier.depth()) +
                    " < levels+1 = " + std::to_string(config.levels + 1));
  }
  auto v = detail::make_views(strong, weak, split);
  const double temp = config.student_train.soft_temperature;

  CslRun run = run_vanilla(strong, weak, hier.levels[0][0], split, config, precomputed_ceiling);
  LinearHead student = std::move(run.student);

  AssignmentPrior level_prior = config.prior;
  for (int k = 1; k <= config.levels; ++k) {
    const std::vector<Supervisor>& level = hier.levels[static_cast<std::size_t>(k)];
    std::vector<Scope> scopes;
    for (const Supervisor& sup : level) scopes.push_back(sup.scope);
    std::vector<AnnotatedSet> per_sup;
    per_sup.reserve(level.size());
    for (const Supervisor& sup : level) {
      per_sup.push_back(annotate(sup, v.weak_train, config.label_mode, temp));
    }
    std::vector<int> zhat;
    if (config.oracle_assignment) {
      zhat = oracle_assign(v.weak_train, scopes);
    } else {
      std::vector<Prediction> student_preds = forward(student, v.strong_train);
      AssignmentPosterior post =
          posterior(level, v.weak_train, student_preds, level_prior, config.label_mode);
      zhat = assign(post);
      // Next level inherits this posterior as its prior when the scopes refine.
      level_prior = config.prior;
      if (k < config.levels) {
        std::vector<Scope> next_scopes;
        for (const Supervisor& sup : hier.levels[static_cast<std::size_t>(k) + 1]) {
          next_scopes.push_back(sup.scope);
        }
        if (is_refinement(scopes, next_scopes)) {
          level_prior = refine_prior(post, scopes, next_scopes);
        }
      }
    }

    AnnotatedSet merged;
    merged.mode = config.label_mode;
    merged.indices = v.weak_train.indices;
    merged.annotations.reserve(zhat.size());
    merged.source = zhat;
    for (std::size_t i = 0; i < zhat.size(); ++i) {
      merged.annotations.push_back(per_sup[static_cast<std::size_t>(zhat[i])].annotations[i]);
    }

    RoundDiagnostics diag;
    diag.level = k;
    diag.supervisor_count = level.size();
    diag.assignment_accuracy = assignment_accuracy(zhat, oracle_assign(v.weak_train, scopes));

    if (config.denoise_enabled) {
      TrainConfig local_cfg = detail::student_config(config);
      std::map<int, LinearHead> locals = train_local_students(strong, merged, local_cfg);
      // Phase 1: teacher-student gate selects the phase-2 training set.
      DenoiseConfig ts_only = config.denoise;
      ts_only.apply_local_global = false;
      FilterResult phase1 =
          filter_annotated_set(merged, strong, locals, student, ts_only);
      if (phase1.kept.size() == 0) {
        throw RuntimeFailure("run_csl: teacher-student filter kept nothing at level " +
                             std::to_string(k));
      }
      LinearHead global1 =
          detail::train_student(view_from_indices(strong, phase1.kept.indices),
                               targets_from_annotations(phase1.kept), config, &student);
      // Phase 2: both checks against the phase-1 global student, then one
      // final retrain on the surviving set.
      FilterResult final_filter =
          filter_annotated_set(merged, strong, locals, global1, config.denoise);
      if (final_filter.kept.size() == 0) {
        throw RuntimeFailure("run_csl: filter kept nothing at level " + std::to_string(k));
      }
      diag.kept_fraction =
          static_cast<double>(final_filter.kept.size()) / static_cast<double>(merged.size());
      diag.relaxed_local_global = final_filter.relaxed_local_global;
      diag.relaxed_teacher_student = final_filter.relaxed_teacher_student;
      student = detail::train_student(view_from_indices(strong, final_filter.kept.indices),
                                      targets_from_annotations(final_filter.kept), config,
                                      &student);
    } else {
      student = detail::train_student(v.strong_train, targets_from_annotations(merged), config,
                                      &student);
    }
    diag.student_top1 = evaluate_topk(student, v.strong_eval, 1);
    run.report.rounds.push_back(diag);
  }

  run.student = std::move(student);
  run.report.s_student = run.report.rounds.back().student_top1;
  run.report.pgr = pgr(run.report.s_student, run.report.s_weak, run.report.s_ceiling);
  return run;
}

struct SweepEntry {
  double param = 0.0;
  PgrReport report;
};

struct SweepResult {
  std::string kind;
  std::vector<SweepEntry> entries;  // params strictly ordered
  std::uint64_t seed = 0;
};

// Capability-gap sweep: weaken the generalist by truncating its training and
// measure how much of the gap the student still recovers.
inline SweepResult capability_gap_sweep(const EmbeddingDataset& strong,
                                        const EmbeddingDataset& weak, const DatasetSplit& split,
                                        const std::vector<long>& truncations,
                                        const CslConfig& config) {
  if (truncations.empty()) throw DataError("gap sweep needs at least one truncation point");
  auto v = detail::make_views(strong, weak, split);
  const double ceiling = detail::ceiling_accuracy(v, config);
  Scope full;
  full.kind = ScopeKind::ClassSubset;
  full.members.resize(weak.class_count);
  std::iota(full.members.begin(), full.members.end(), 0u);

  SweepResult result;
  result.kind = "gap";
  result.seed = config.seed;
  for (long steps : truncations) {
    TrainConfig tc = config.teacher_train;
    tc.seed = mix_seed(config.seed, full.hash());
    tc.max_steps = steps;
    Supervisor generalist;
    generalist.scope = full;
    DatasetView sub = restrict_to_scope(v.weak_train, full);
    generalist.head = train_probe(sub, Targets::from_labels(sub), tc);
    CslRun run = run_vanilla(strong, weak, generalist, split, config, ceiling);
    result.entries.push_back({static_cast<double>(steps), run.report});
  }
  return result;
}

enum class AssignMode { Oracle, Learned };

// Teacher-count sweep: collective teacher accuracy per level under oracle or
// learned assignment. Each entry's s_weak is the collective accuracy of the
// level's teachers on the eval split; the student advances level by level
// with denoising off.
inline SweepResult supervisor_count_sweep(const EmbeddingDataset& strong,
                                          const EmbeddingDataset& weak,
                                          const SupervisorHierarchy& hier, AssignMode mode,
                                          const DatasetSplit& split, const CslConfig& config) {
  if (hier.depth() < 2) throw DataError("count sweep needs a hierarchy with >= 2 levels");
  auto v = detail::make_views(strong, weak, split);
  const double ceiling = detail::ceiling_accuracy(v, config);
  const double temp = config.student_train.soft_temperature;

  SweepResult result;
  result.kind = mode == AssignMode::Oracle ? "count-oracle" : "count-learned";
  result.seed = config.seed;

  CslRun base = run_vanilla(strong, weak, hier.levels[0][0], split, config, ceiling);
  LinearHead student = std::move(base.student);
  {
    SweepEntry entry;
    entry.param = 1.0;
    entry.report = base.report;
    result.entries.push_back(std::move(entry));
  }

  AssignmentPrior prior_train = config.prior;
  AssignmentPrior prior_eval = config.prior;
  std::vector<Scope> prev_scopes;
  for (std::size_t k = 1; k < hier.depth(); ++k) {
    const std::vector<Supervisor>& level = hier.levels[k];
    std::vector<Scope> scopes;
    for (const Supervisor& sup : level) scopes.push_back(sup.scope);
    // Posteriors flow down the refinement chain as the next level's priors,
    // separately for the train and eval splits.
    const bool refines = !prev_scopes.empty() && is_refinement(prev_scopes, scopes);

    auto assign_for = [&](const DatasetView& weak_view, const DatasetView& strong_view,
                          AssignmentPrior& prior) {
      if (mode == AssignMode::Oracle) return oracle_assign(weak_view, scopes);
      std::vector<Prediction> preds = forward(student, strong_view);
      AssignmentPosterior post =
          posterior(level, weak_view, preds, refines ? prior : config.prior, config.label_mode);
      prior = config.prior;
      if (k + 1 < hier.depth()) {
        std::vector<Scope> next_scopes;
        for (const Supervisor& sup : hier.levels[k + 1]) next_scopes.push_back(sup.scope);
        if (is_refinement(scopes, next_scopes)) {
          prior = refine_prior(post, scopes, next_scopes);
        }
      }
      return assign(post);
    };

    // Collective teacher accuracy on the eval split: each example scored by
    // its assigned supervisor's hard annotation.
    std::vector<int> z_eval = assign_for(v.weak_eval, v.strong_eval, prior_eval);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < v.weak_eval.size(); ++i) {
      Prediction p =
          forward_one(level[static_cast<std::size_t>(z_eval[i])].head, v.weak_eval.row(i));
      if (p.top1 == v.weak_eval.label(i)) ++hits;
    }
    const double collective = static_cast<double>(hits) / static_cast<double>(v.weak_eval.size());

    // Advance the student one round on train-split assignments.
    std::vector<int> z_train = assign_for(v.weak_train, v.strong_train, prior_train);
    AnnotatedSet merged;
    merged.mode = config.label_mode;
    merged.indices = v.weak_train.indices;
    merged.source = z_train;
    std::vector<AnnotatedSet> per_sup;
    for (const Supervisor& sup : level) {
      per_sup.push_back(annotate(sup, v.weak_train, config.label_mode, temp));
    }
    for (std::size_t i = 0; i < z_train.size(); ++i) {
      merged.annotations.push_back(
          per_sup[static_cast<std::size_t>(z_train[i])].annotations[i]);
    }
    student = detail::train_student(v.strong_train, targets_from_annotations(merged), config,
                                    &student);

    SweepEntry entry;
    entry.param = static_cast<double>(level.size());
    entry.report.s_weak = collective;
    entry.report.s_student = evaluate_topk(student, v.strong_eval, 1);
    entry.report.s_ceiling = ceiling;
    entry.report.pgr = pgr(entry.report.s_student, base.report.s_weak, ceiling);
    RoundDiagnostics diag;
    diag.level = static_cast<int>(k);
    diag.supervisor_count = level.size();
    diag.assignment_accuracy =
        assignment_accuracy(z_eval, oracle_assign(v.weak_eval, scopes));
    diag.student_top1 = entry.report.s_student;
    entry.report.rounds.push_back(diag);
    result.entries.push_back(std::move(entry));
    prev_scopes = std::move(scopes);
  }
  return result;
}

enum class EnsembleMode { MajorityVote, Average };

// Classical flat-ensemble baselines over one level's teachers.
inline std::vector<Prediction> ensemble_baselines(const std::vector<Supervisor>& supervisors,
                                                  const DatasetView& view, EnsembleMode mode) {
  if (supervisors.empty()) throw DataError("ensemble: no supervisors");
  const std::uint32_t C = supervisors.front().head.class_count;
  std::vector<Prediction> out(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) {
    std::vector<double> agg(C, 0.0);
    for (const Supervisor& sup : supervisors) {
      Prediction p = forward_one(sup.head, view.row(i));
      if (mode == EnsembleMode::MajorityVote) {
        agg[p.top1] += 1.0;
      } else {
        for (std::uint32_t c = 0; c < C; ++c) agg[c] += p.probs[c];
      }
    }
    const double total = static_cast<double>(supervisors.size());
    for (double& a : agg) a /= total;
    Prediction pred;
    pred.probs = agg;
    pred.logits.resize(C);
    for (std::uint32_t c = 0; c < C; ++c) {
      pred.logits[c] = std::log(std::max(agg[c], kProbFloor));
    }
    pred.top1 = argmax_lowest(agg);
    out[i] = std::move(pred);
  }
  return out;
}

// ---- report serialization -------------------------------------------------

inline nlohmann::json to_json(const RoundDiagnostics& d) {
  return {{"level", d.level},
          {"supervisor_count", d.supervisor_count},
          {"assignment_accuracy", d.assignment_accuracy},
          {"kept_fraction", d.kept_fraction},
          {"student_top1", d.student_top1},
          {"relaxed_local_global", d.relaxed_local_global},
          {"relaxed_teacher_student", d.relaxed_teacher_student}};
}

inline nlohmann::json to_json(const PgrReport& r) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& d : r.rounds) rounds.push_back(to_json(d));
  return {{"s_weak", r.s_weak},
          {"s_student", r.s_student},
          {"s_ceiling", r.s_ceiling},
          {"pgr", r.pgr},
          {"rounds", rounds}};
}

// Deterministic payload plus a non-deterministic meta block; comparisons and
// hashes must use the payload only.
inline void write_report(const PgrReport& report, const nlohmann::json& config_echo,
                         std::uint64_t seed, int jobs, const std::string& path) {
  nlohmann::json j;
  j["payload"] = {{"config", config_echo},
                  {"seed", seed},
                  {"threads", jobs},
                  {"report", to_json(report)}};
  j["payload"]["config_hash"] = [&] {
    const std::string s = j["payload"]["config"].dump();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
    return std::string(buf);
  }();
  j["meta"] = {{"generated_unix_time", static_cast<long>(::time(nullptr))}};
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << j.dump(2) << "\n";
}

inline void append_sweep_csv_header(std::ostream& os) {
  os << "param,seed,s_weak,s,s_ceiling,pgr\n";
}

inline void append_sweep_csv(std::ostream& os, const SweepResult& result) {
  char buf[128];
  for (const SweepEntry& e : result.entries) {
    std::snprintf(buf, sizeof buf, "%.17g,%llu,%.17g,%.17g,%.17g,%.17g\n", e.param,
                  static_cast<unsigned long long>(result.seed), e.report.s_weak,
                  e.report.s_student, e.report.s_ceiling, e.report.pgr);
    os << buf;
  }
}

}  // namespace csl
