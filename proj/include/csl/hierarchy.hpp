#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "csl/dataset.hpp"
#include "csl/error.hpp"
#include "csl/probe.hpp"

namespace csl {

enum class ScopeKind { ClassSubset, DomainSubset };

// The slice of the problem a specialist teacher is responsible for: a set of
// class ids or a set of domain ids.
struct Scope {
  ScopeKind kind = ScopeKind::ClassSubset;
  std::vector<std::uint32_t> members;  // sorted, unique

  bool contains(std::uint32_t id) const {
    return std::binary_search(members.begin(), members.end(), id);
  }

  std::uint64_t hash() const {
    std::vector<std::uint32_t> buf;
    buf.push_back(kind == ScopeKind::ClassSubset ? 0u : 1u);
    buf.insert(buf.end(), members.begin(), members.end());
    return fnv1a(buf.data(), buf.size() * sizeof(std::uint32_t));
  }
};

struct Supervisor {
  int level = 0;
  int index = 0;
  Scope scope;
  LinearHead head;
};

// Levels 0..K of disjoint-scope teachers; level 0 holds the lone generalist.
struct SupervisorHierarchy {
  std::vector<std::vector<Supervisor>> levels;

  std::size_t depth() const { return levels.size(); }
};

namespace detail {

inline void check_partition(const std::vector<Scope>& scopes, std::uint32_t universe,
                            const std::string& what) {
  std::vector<std::uint32_t> seen;
  for (const Scope& s : scopes) {
    if (s.members.empty()) throw DataError(what + ": empty scope");
    for (std::uint32_t id : s.members) {
      if (id >= universe) {
        throw DataError(what + ": id " + std::to_string(id) + " outside [0," +
                        std::to_string(universe) + ")");
      }
      seen.push_back(id);
    }
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
    throw DataError(what + ": overlapping scopes");
  }
  if (seen.size() != universe) throw DataError(what + ": scopes do not cover the id set");
}

}  // namespace detail

// Contiguous near-equal class blocks per level, each level refining the one
// above it. With a shuffle seed the class-to-block mapping is permuted first
// (block composition stays seed-deterministic).
inline std::vector<std::vector<Scope>> build_class_partition_levels(
    std::uint32_t class_count, const std::vector<int>& branching,
    std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  std::vector<std::uint32_t> order(class_count);
  std::iota(order.begin(), order.end(), 0u);
  if (shuffle_seed) {
    Rng rng(mix_seed(*shuffle_seed, 0xb10c));
    rng.shuffle(order);
  }
  std::vector<std::vector<Scope>> levels;
  int prev = 1;
  for (int m : branching) {
    if (m < 1) throw DataError("branching factor must be >= 1");
    if (static_cast<std::uint32_t>(m) > class_count) {
      throw DataError("branching factor " + std::to_string(m) + " exceeds class count");
    }
    if (m % prev != 0) {
      throw DataError("branching " + std::to_string(m) + " does not refine previous level of " +
                      std::to_string(prev));
    }
    std::vector<Scope> scopes;
    const std::uint32_t base = class_count / static_cast<std::uint32_t>(m);
    const std::uint32_t rem = class_count % static_cast<std::uint32_t>(m);
    std::uint32_t pos = 0;
    for (std::uint32_t i = 0; i < static_cast<std::uint32_t>(m); ++i) {
      const std::uint32_t len = base + (i < rem ? 1 : 0);
      Scope s;
      s.kind = ScopeKind::ClassSubset;
      s.members.assign(order.begin() + pos, order.begin() + pos + len);
      std::sort(s.members.begin(), s.members.end());
      scopes.push_back(std::move(s));
      pos += len;
    }
    levels.push_back(std::move(scopes));
    prev = m;
  }
  return levels;
}

inline std::vector<std::vector<Scope>> build_domain_group_levels(
    std::uint32_t domain_count,
    const std::vector<std::vector<std::vector<std::uint32_t>>>& groups) {
  std::vector<std::vector<Scope>> levels;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    std::vector<Scope> scopes;
    for (const auto& ids : groups[k]) {
      Scope s;
      s.kind = ScopeKind::DomainSubset;
      s.members = ids;
      std::sort(s.members.begin(), s.members.end());
      scopes.push_back(std::move(s));
    }
    detail::check_partition(scopes, domain_count, "domain level " + std::to_string(k + 1));
    levels.push_back(std::move(scopes));
  }
  return levels;
}

// True when every child scope is contained in some same-kind parent scope.
inline bool is_refinement(const std::vector<Scope>& parent_scopes,
                          const std::vector<Scope>& child_scopes) {
  for (const Scope& child : child_scopes) {
    bool found = false;
    for (const Scope& parent : parent_scopes) {
      if (parent.kind != child.kind) continue;
      bool subset = true;
      for (std::uint32_t id : child.members) {
        if (!parent.contains(id)) {
          subset = false;
          break;
        }
      }
      if (subset) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

inline DatasetView restrict_to_scope(const DatasetView& view, const Scope& scope) {
  RowPredicate pred;
  if (scope.kind == ScopeKind::ClassSubset) {
    pred.needs_label = true;
    pred.fn = [&scope](std::uint32_t label, std::uint32_t) { return scope.contains(label); };
  } else {
    pred.needs_domain = true;
    pred.fn = [&scope](std::uint32_t, std::uint32_t domain) { return scope.contains(domain); };
  }
  return restrict(view, pred);
}

// Trains every teacher on ground truth within its scope. The generalist level
// is prepended automatically. Each head's seed derives from its scope, so a
// full-scope specialist is bit-identical to the generalist.
inline SupervisorHierarchy train_hierarchy(const DatasetView& weak_train,
                                           const std::vector<std::vector<Scope>>& scope_levels,
                                           const TrainConfig& config) {
  if (!weak_train.has_labels()) throw DataError("train_hierarchy: dataset has no labels");
  const ScopeKind kind =
      scope_levels.empty() ? ScopeKind::ClassSubset : scope_levels.front().front().kind;
  const std::uint32_t universe = kind == ScopeKind::ClassSubset ? weak_train.data->class_count
                                                                : weak_train.data->domain_count;
  SupervisorHierarchy hier;
  Scope full;
  full.kind = kind;
  full.members.resize(universe);
  std::iota(full.members.begin(), full.members.end(), 0u);

  auto train_one = [&](const Scope& scope, int level, int index) {
    DatasetView sub = restrict_to_scope(weak_train, scope);
    if (sub.size() == 0) {
      throw DataError("train_hierarchy: scope at level " + std::to_string(level) + " index " +
                      std::to_string(index) + " matches no training rows");
    }
    TrainConfig c = config;
    c.seed = mix_seed(config.seed, scope.hash());
    Supervisor sup;
    sup.level = level;
    sup.index = index;
    sup.scope = scope;
    sup.head = train_probe(sub, Targets::from_labels(sub), c);
    return sup;
  };

  hier.levels.push_back({train_one(full, 0, 0)});
  for (std::size_t k = 0; k < scope_levels.size(); ++k) {
    detail::check_partition(scope_levels[k], universe, "level " + std::to_string(k + 1));
    if (k > 0 && scope_levels[k].size() < scope_levels[k - 1].size()) {
      throw DataError("supervisor count must not shrink between levels");
    }
    std::vector<Supervisor> level;
    for (std::size_t m = 0; m < scope_levels[k].size(); ++m) {
      level.push_back(train_one(scope_levels[k][m], static_cast<int>(k + 1),
                                static_cast<int>(m)));
    }
    hier.levels.push_back(std::move(level));
  }
  return hier;
}

// Per-example teacher annotations plus which supervisor produced them.
struct AnnotatedSet {
  std::vector<std::size_t> indices;  // original dataset row ids
  LabelMode mode = LabelMode::Hard;
  std::vector<Annotation> annotations;
  std::vector<int> source;  // supervisor index within its level

  std::size_t size() const { return indices.size(); }
};

inline AnnotatedSet annotate(const Supervisor& sup, const DatasetView& view, LabelMode mode,
                             double temperature = 1.0) {
  AnnotatedSet out;
  out.mode = mode;
  out.indices = view.indices;
  out.annotations.reserve(view.size());
  out.source.assign(view.size(), sup.index);
  for (std::size_t i = 0; i < view.size(); ++i) {
    Prediction pred = forward_one(sup.head, view.row(i));
    Annotation a;
    a.mode = mode;
    if (mode == LabelMode::Hard) {
      a.hard = pred.top1;
    } else {
      std::vector<double> scaled(pred.logits);
      for (double& v : scaled) v /= temperature;
      a.soft = softmax(scaled);
    }
    out.annotations.push_back(std::move(a));
  }
  return out;
}

// Mixture prediction over one level's supervisors: p(y|x) = sum_z p(z) p(y|x,z).
inline std::vector<Prediction> collective_predict(const std::vector<Supervisor>& supervisors,
                                                  const DatasetView& view,
                                                  const std::vector<double>& prior) {
  if (supervisors.empty()) throw DataError("collective_predict: no supervisors");
  if (prior.size() != supervisors.size()) {
    throw DataError("collective_predict: prior size != supervisor count");
  }
  double sum = 0.0;
  for (double p : prior) {
    if (p < 0) throw DataError("collective_predict: negative prior entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw DataError("collective_predict: prior not normalized");
  std::vector<Prediction> out(view.size());
  const std::uint32_t C = supervisors.front().head.class_count;
  for (std::size_t i = 0; i < view.size(); ++i) {
    std::vector<double> mix(C, 0.0);
    for (std::size_t z = 0; z < supervisors.size(); ++z) {
      Prediction p = forward_one(supervisors[z].head, view.row(i));
      for (std::uint32_t c = 0; c < C; ++c) mix[c] += prior[z] * p.probs[c];
    }
    Prediction pred;
    pred.probs = mix;
    pred.logits.resize(C);
    for (std::uint32_t c = 0; c < C; ++c) {
      pred.logits[c] = std::log(std::max(mix[c], kProbFloor));
    }
    pred.top1 = argmax_lowest(mix);
    out[i] = std::move(pred);
  }
  return out;
}

// Manifest: one line per supervisor,
//   level <k> index <m> kind <class|domain> members <a,b,...> head <relpath>
inline void save_hierarchy(const SupervisorHierarchy& hier, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / "hierarchy.manifest");
  if (!os) throw DataError("cannot write hierarchy manifest in '" + dir + "'");
  for (const auto& level : hier.levels) {
    for (const Supervisor& sup : level) {
      std::string head_file =
          "head_" + std::to_string(sup.level) + "_" + std::to_string(sup.index) + ".bin";
      save_head(sup.head, (fs::path(dir) / head_file).string());
      os << "level " << sup.level << " index " << sup.index << " kind "
         << (sup.scope.kind == ScopeKind::ClassSubset ? "class" : "domain") << " members ";
      for (std::size_t i = 0; i < sup.scope.members.size(); ++i) {
        if (i) os << ',';
        os << sup.scope.members[i];
      }
      os << " head " << head_file << "\n";
    }
  }
}

inline SupervisorHierarchy load_hierarchy(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "hierarchy.manifest");
  if (!is) throw DataError("cannot open hierarchy manifest in '" + dir + "'");
  SupervisorHierarchy hier;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string kw, kind_str, members_str, head_file;
    Supervisor sup;
    ss >> kw >> sup.level >> kw >> sup.index >> kw >> kind_str >> kw >> members_str >> kw >>
        head_file;
    if (!ss) throw DataError("malformed manifest line: " + line);
    sup.scope.kind = kind_str == "class" ? ScopeKind::ClassSubset : ScopeKind::DomainSubset;
    std::istringstream ms(members_str);
    std::string tok;
    while (std::getline(ms, tok, ',')) {
      sup.scope.members.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
    }
    sup.head = load_head((fs::path(dir) / head_file).string());
    if (static_cast<std::size_t>(sup.level) >= hier.levels.size()) {
      hier.levels.resize(sup.level + 1);
    }
    hier.levels[sup.level].push_back(std::move(sup));
  }
  for (auto& level : hier.levels) {
    std::sort(level.begin(), level.end(),
              [](const Supervisor& a, const Supervisor& b) { return a.index < b.index; });
  }
  return hier;
}

}  // namespace csl
