#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "csl/error.hpp"
#include "csl/hierarchy.hpp"
#include "csl/probe.hpp"

namespace csl {

struct DenoiseConfig {
  std::uint32_t agreement_k = 3;  // top-k agreement threshold
  bool apply_teacher_student = true;
  bool apply_local_global = true;
  double min_kept_fraction = 0.2;  // guard against filter collapse

  void validate(std::uint32_t class_count) const {
    if (agreement_k < 1 || agreement_k > class_count) {
      throw DataError("agreement_k must lie in [1, class_count]");
    }
    if (!(min_kept_fraction > 0 && min_kept_fraction <= 1)) {
      throw DataError("min_kept_fraction must lie in (0,1]");
    }
  }
};

enum class FailedCheck { None, TeacherStudent, LocalGlobal };

struct FilterVerdict {
  bool keep = true;
  double teacher_student_distance = 0.0;
  double local_global_distance = 0.0;
  FailedCheck failed_check = FailedCheck::None;
};

struct NoiseRateEstimate {
  double eta = 0.0;
};

inline Targets targets_from_annotations(const AnnotatedSet& annot) {
  Targets t;
  t.mode = annot.mode;
  for (const Annotation& a : annot.annotations) {
    if (annot.mode == LabelMode::Hard) {
      t.hard.push_back(a.hard);
    } else {
      t.soft.push_back(a.soft);
    }
  }
  return t;
}

inline AnnotatedSet annotated_subset(const AnnotatedSet& annot,
                                     const std::vector<std::size_t>& positions) {
  AnnotatedSet out;
  out.mode = annot.mode;
  for (std::size_t p : positions) {
    out.indices.push_back(annot.indices[p]);
    out.annotations.push_back(annot.annotations[p]);
    out.source.push_back(annot.source[p]);
  }
  return out;
}

// Phase-1 locally specialized students: one strong-feature head per assigned
// supervisor, trained on that supervisor's annotations only. Supervisors with
// no assigned examples yield no local student.
inline std::map<int, LinearHead> train_local_students(const EmbeddingDataset& strong,
                                                      const AnnotatedSet& annot,
                                                      const TrainConfig& config) {
  std::map<int, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < annot.size(); ++i) by_source[annot.source[i]].push_back(i);
  if (by_source.empty()) throw DataError("train_local_students: no annotated examples");
  std::map<int, LinearHead> out;
  for (const auto& [sup_id, positions] : by_source) {
    AnnotatedSet sub = annotated_subset(annot, positions);
    DatasetView view = view_from_indices(strong, sub.indices);
    TrainConfig c = config;
    c.seed = mix_seed(config.seed, 0x10ca1 + static_cast<std::uint64_t>(sup_id));
    out.emplace(sup_id, train_probe(view, targets_from_annotations(sub), c));
  }
  return out;
}

// Both consistency checks reduce to top-k set membership.
inline bool teacher_student_check(const Prediction& local_pred, const Annotation& annotation,
                                  std::uint32_t agreement_k) {
  return in_topk(local_pred.probs, annotation.top_class(), agreement_k);
}

inline bool local_global_check(const Prediction& global_pred, const Prediction& local_pred,
                               std::uint32_t agreement_k) {
  return in_topk(global_pred.probs, local_pred.top1, agreement_k);
}

struct FilterResult {
  AnnotatedSet kept;
  std::vector<FilterVerdict> verdicts;  // aligned with the input set
  bool relaxed_local_global = false;    // guard disabled the local-global check
  bool relaxed_teacher_student = false;
};

namespace detail {

inline std::vector<FilterVerdict> compute_verdicts(const AnnotatedSet& annot,
                                                   const EmbeddingDataset& strong,
                                                   const std::map<int, LinearHead>& local_students,
                                                   const LinearHead& global_student,
                                                   const DenoiseConfig& cfg, bool use_ts,
                                                   bool use_lg) {
  std::vector<FilterVerdict> verdicts(annot.size());
  for (std::size_t i = 0; i < annot.size(); ++i) {
    FilterVerdict& v = verdicts[i];
    auto it = local_students.find(annot.source[i]);
    if (it == local_students.end()) continue;  // no local student: kept, logged as zero distances
    const float* x = strong.row(annot.indices[i]);
    Prediction local_pred = forward_one(it->second, x);
    Prediction global_pred = forward_one(global_student, x);
    v.teacher_student_distance = distance(annot.annotations[i], soft_annotation(local_pred));
    v.local_global_distance =
        distance(soft_annotation(global_pred), soft_annotation(local_pred));
    if (use_ts && !teacher_student_check(local_pred, annot.annotations[i], cfg.agreement_k)) {
      v.keep = false;
      v.failed_check = FailedCheck::TeacherStudent;
    } else if (use_lg && !local_global_check(global_pred, local_pred, cfg.agreement_k)) {
      v.keep = false;
      v.failed_check = FailedCheck::LocalGlobal;
    }
  }
  return verdicts;
}

}  // namespace detail

// Applies the enabled checks; if the kept fraction would drop below
// min_kept_fraction, the local-global check is relaxed first, then the
// teacher-student check. Relaxations are reported, never silent.
inline FilterResult filter_annotated_set(const AnnotatedSet& annot,
                                         const EmbeddingDataset& strong,
                                         const std::map<int, LinearHead>& local_students,
                                         const LinearHead& global_student,
                                         const DenoiseConfig& cfg) {
  cfg.validate(strong.class_count);
  FilterResult res;
  bool use_ts = cfg.apply_teacher_student;
  bool use_lg = cfg.apply_local_global;
  res.verdicts = detail::compute_verdicts(annot, strong, local_students, global_student, cfg,
                                          use_ts, use_lg);
  auto kept_count = [&] {
    std::size_t n = 0;
    for (const FilterVerdict& v : res.verdicts) n += v.keep ? 1 : 0;
    return n;
  };
  const auto floor_count = static_cast<std::size_t>(
      std::ceil(cfg.min_kept_fraction * static_cast<double>(annot.size())));
  if (use_lg && kept_count() < floor_count) {
    use_lg = false;
    res.relaxed_local_global = true;
    res.verdicts = detail::compute_verdicts(annot, strong, local_students, global_student, cfg,
                                            use_ts, use_lg);
  }
  if (use_ts && kept_count() < floor_count) {
    use_ts = false;
    res.relaxed_teacher_student = true;
    res.verdicts = detail::compute_verdicts(annot, strong, local_students, global_student, cfg,
                                            use_ts, use_lg);
  }
  std::vector<std::size_t> kept_positions;
  for (std::size_t i = 0; i < res.verdicts.size(); ++i) {
    if (res.verdicts[i].keep) kept_positions.push_back(i);
  }
  res.kept = annotated_subset(annot, kept_positions);
  return res;
}

// Small-loss baseline: keep the ceil((1-eta)*N) examples with the smallest
// distances, ties resolved by lower index.
inline std::vector<std::size_t> small_loss_filter(const std::vector<double>& distances,
                                                  double eta) {
  if (eta < 0 || eta > 1) throw DataError("small_loss_filter: eta must lie in [0,1]");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return distances[a] < distances[b];
  });
  const auto n_keep = static_cast<std::size_t>(
      std::ceil((1.0 - eta) * static_cast<double>(distances.size())));
  std::vector<std::size_t> kept(order.begin(), order.begin() + std::min(n_keep, order.size()));
  std::sort(kept.begin(), kept.end());
  return kept;
}

// Verdict dump: example_index, z_hat, ts_distance, lg_distance, failed_check, kept
inline void dump_verdicts(const AnnotatedSet& annot, const std::vector<FilterVerdict>& verdicts,
                          const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const char* failed = verdicts[i].failed_check == FailedCheck::None ? "none"
                         : verdicts[i].failed_check == FailedCheck::TeacherStudent
                             ? "teacher-student"
                             : "local-global";
    os << annot.indices[i] << ',' << annot.source[i] << ','
       << verdicts[i].teacher_student_distance << ',' << verdicts[i].local_global_distance << ','
       << failed << ',' << (verdicts[i].keep ? 1 : 0) << "\n";
  }
}

}  // namespace csl
