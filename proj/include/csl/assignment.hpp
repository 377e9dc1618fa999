#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "csl/error.hpp"
#include "csl/hierarchy.hpp"
#include "csl/probe.hpp"

namespace csl {

// Prior over a level's supervisors: uniform, or a fixed per-example table
// (e.g. from an external domain classifier).
struct AssignmentPrior {
  enum class Kind { Uniform, FixedTable };
  Kind kind = Kind::Uniform;
  std::vector<std::vector<double>> table;  // per example, used for FixedTable

  static AssignmentPrior uniform() { return {}; }

  double at(std::size_t example, std::size_t z, std::size_t m) const {
    if (kind == Kind::Uniform) return 1.0 / static_cast<double>(m);
    return table[example][z];
  }
};

struct AssignmentPosterior {
  std::vector<std::vector<double>> probs;  // per example, length m, on the simplex
  std::vector<int> argmax;                 // ties resolved to the lowest index
};

// Likelihood of the student's current output under one teacher: in hard mode
// the teacher's probability mass on the student's top-1 class, in soft mode
// exp(-CE) so that smaller distance means larger likelihood. Clamped away
// from zero so posteriors never degenerate.
inline std::vector<double> teacher_likelihood(const Supervisor& sup, const DatasetView& view,
                                              const std::vector<Prediction>& student_preds,
                                              LabelMode mode) {
  if (student_preds.size() != view.size()) {
    throw DataError("teacher_likelihood: prediction count != view size");
  }
  std::vector<double> out(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) {
    Prediction tp = forward_one(sup.head, view.row(i));
    double lik;
    if (mode == LabelMode::Hard) {
      lik = tp.probs[student_preds[i].top1];
    } else {
      double ce = 0.0;
      for (std::size_t c = 0; c < tp.probs.size(); ++c) {
        ce -= student_preds[i].probs[c] * std::log(std::max(tp.probs[c], kProbFloor));
      }
      lik = std::exp(-ce);
    }
    out[i] = std::max(lik, kProbFloor);
  }
  return out;
}

inline AssignmentPosterior posterior(const std::vector<Supervisor>& supervisors,
                                     const DatasetView& view,
                                     const std::vector<Prediction>& student_preds,
                                     const AssignmentPrior& prior, LabelMode mode) {
  if (supervisors.empty()) throw DataError("posterior: no supervisors");
  const std::size_t m = supervisors.size();
  std::vector<std::vector<double>> lik(m);
  for (std::size_t z = 0; z < m; ++z) {
    lik[z] = teacher_likelihood(supervisors[z], view, student_preds, mode);
  }
  AssignmentPosterior post;
  post.probs.resize(view.size());
  post.argmax.resize(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) {
    std::vector<double> row(m);
    double denom = 0.0;
    for (std::size_t z = 0; z < m; ++z) {
      row[z] = prior.at(i, z, m) * lik[z][i];
      denom += row[z];
    }
    for (double& v : row) v /= denom;
    int best = 0;
    for (std::size_t z = 1; z < m; ++z) {
      if (row[z] > row[best]) best = static_cast<int>(z);
    }
    post.probs[i] = std::move(row);
    post.argmax[i] = best;
  }
  return post;
}

inline std::vector<int> assign(const AssignmentPosterior& post) { return post.argmax; }

// Carries a posterior one level down a refining hierarchy: each child scope
// inherits its parent's posterior mass, split evenly among siblings. Keeps
// the EM chain going instead of restarting from a flat prior every level.
inline AssignmentPrior refine_prior(const AssignmentPosterior& parent_post,
                                    const std::vector<Scope>& parent_scopes,
                                    const std::vector<Scope>& child_scopes) {
  std::vector<std::size_t> parent_of(child_scopes.size());
  std::vector<std::size_t> child_count(parent_scopes.size(), 0);
  for (std::size_t c = 0; c < child_scopes.size(); ++c) {
    bool found = false;
    for (std::size_t p = 0; p < parent_scopes.size(); ++p) {
      if (parent_scopes[p].kind != child_scopes[c].kind) continue;
      bool subset = true;
      for (std::uint32_t id : child_scopes[c].members) {
        if (!parent_scopes[p].contains(id)) {
          subset = false;
          break;
        }
      }
      if (subset) {
        parent_of[c] = p;
        child_count[p] += 1;
        found = true;
        break;
      }
    }
    if (!found) {
      throw DataError("refine_prior: child scope " + std::to_string(c) +
                      " is not contained in any parent scope");
    }
  }
  AssignmentPrior prior;
  prior.kind = AssignmentPrior::Kind::FixedTable;
  prior.table.resize(parent_post.probs.size());
  for (std::size_t i = 0; i < parent_post.probs.size(); ++i) {
    prior.table[i].resize(child_scopes.size());
    for (std::size_t c = 0; c < child_scopes.size(); ++c) {
      prior.table[i][c] = parent_post.probs[i][parent_of[c]] /
                          static_cast<double>(child_count[parent_of[c]]);
    }
  }
  return prior;
}

// Ground-truth assignment: the unique scope containing the example's true
// class (or domain).
inline std::vector<int> oracle_assign(const DatasetView& view, const std::vector<Scope>& scopes) {
  if (scopes.empty()) throw DataError("oracle_assign: no scopes");
  const bool by_class = scopes.front().kind == ScopeKind::ClassSubset;
  if (by_class && !view.has_labels()) throw DataError("oracle_assign: labels missing");
  if (!by_class && !view.has_domains()) throw DataError("oracle_assign: domains missing");
  std::vector<int> out(view.size(), -1);
  for (std::size_t i = 0; i < view.size(); ++i) {
    const std::uint32_t id = by_class ? view.label(i) : view.domain(i);
    for (std::size_t z = 0; z < scopes.size(); ++z) {
      if (scopes[z].contains(id)) {
        out[i] = static_cast<int>(z);
        break;
      }
    }
    if (out[i] < 0) {
      throw DataError("oracle_assign: id " + std::to_string(id) + " covered by no scope");
    }
  }
  return out;
}

inline double assignment_accuracy(const std::vector<int>& predicted,
                                  const std::vector<int>& reference) {
  if (predicted.size() != reference.size()) {
    throw DataError("assignment_accuracy: length mismatch");
  }
  if (predicted.empty()) throw DataError("assignment_accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == reference[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// Diagnostic dump: example_index, z_hat, posterior...
inline void dump_assignment(const AssignmentPosterior& post, const DatasetView& view,
                            const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < post.probs.size(); ++i) {
    os << view.original_index(i) << ',' << post.argmax[i];
    for (double p : post.probs[i]) os << ',' << p;
    os << "\n";
  }
}

}  // namespace csl
