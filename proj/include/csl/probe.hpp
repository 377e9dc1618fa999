#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "csl/dataset.hpp"
#include "csl/error.hpp"
#include "csl/rng.hpp"

namespace csl {

enum class LabelMode { Hard, Soft };

inline constexpr double kProbFloor = 1e-12;

// Softmax linear classifier over a frozen embedding space. Parameters are
// kept in double for gradient fidelity; the on-disk format is float32.
struct LinearHead {
  std::uint32_t class_count = 0;
  std::uint32_t feature_dim = 0;
  std::vector<double> weights;  // C x D row-major
  std::vector<double> bias;     // C

  double weight(std::uint32_t c, std::uint32_t j) const { return weights[c * feature_dim + j]; }
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  LabelMode label_mode = LabelMode::Hard;
  double soft_temperature = 1.0;
  std::optional<long> max_steps;  // caps total minibatch updates

  void validate() const {
    if (epochs < 1) throw DataError("epochs must be positive");
    if (batch_size < 1) throw DataError("batch_size must be positive");
    if (!(learning_rate > 0)) throw DataError("learning_rate must be positive");
    if (momentum < 0 || momentum >= 1) throw DataError("momentum must lie in [0,1)");
    if (!(soft_temperature > 0)) throw DataError("soft_temperature must be positive");
    if (max_steps && *max_steps < 0) throw DataError("max_steps must be >= 0");
  }
};

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probs;
  std::uint32_t top1 = 0;
};

// One teacher annotation: a hard class id or a soft distribution.
struct Annotation {
  LabelMode mode = LabelMode::Hard;
  std::uint32_t hard = 0;
  std::vector<double> soft;

  std::uint32_t top_class() const {
    if (mode == LabelMode::Hard) return hard;
    std::uint32_t best = 0;
    for (std::uint32_t c = 1; c < soft.size(); ++c) {
      if (soft[c] > soft[best]) best = c;
    }
    return best;
  }
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - m);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline std::uint32_t argmax_lowest(const std::vector<double>& v) {
  std::uint32_t best = 0;
  for (std::uint32_t c = 1; c < v.size(); ++c) {
    if (v[c] > v[best]) best = c;
  }
  return best;
}

// True iff class `cls` ranks among the k highest entries; equal entries are
// ordered by lower class id first.
inline bool in_topk(const std::vector<double>& scores, std::uint32_t cls, std::uint32_t k) {
  std::uint32_t rank = 0;
  for (std::uint32_t c = 0; c < scores.size(); ++c) {
    if (scores[c] > scores[cls] || (scores[c] == scores[cls] && c < cls)) ++rank;
  }
  return rank < k;
}

inline LinearHead init_head(std::uint32_t class_count, std::uint32_t feature_dim,
                            std::uint64_t seed) {
  if (class_count < 2) throw DataError("init_head: class_count must be >= 2");
  if (feature_dim < 1) throw DataError("init_head: feature_dim must be >= 1");
  LinearHead head;
  head.class_count = class_count;
  head.feature_dim = feature_dim;
  head.weights.resize(static_cast<std::size_t>(class_count) * feature_dim);
  head.bias.assign(class_count, 0.0);
  Rng rng(mix_seed(seed, 0x4ead));
  const double scale = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (double& w : head.weights) w = (2.0 * rng.next_double() - 1.0) * scale;
  return head;
}

inline Prediction forward_one(const LinearHead& head, const float* x) {
  Prediction pred;
  pred.logits.resize(head.class_count);
  for (std::uint32_t c = 0; c < head.class_count; ++c) {
    double acc = head.bias[c];
    const double* w = head.weights.data() + static_cast<std::size_t>(c) * head.feature_dim;
    for (std::uint32_t j = 0; j < head.feature_dim; ++j) {
      acc += w[j] * static_cast<double>(x[j]);
    }
    pred.logits[c] = acc;
  }
  pred.probs = softmax(pred.logits);
  pred.top1 = argmax_lowest(pred.probs);
  return pred;
}

inline std::vector<Prediction> forward(const LinearHead& head, const DatasetView& view) {
  if (view.data->dim != head.feature_dim) {
    throw DataError("forward: feature dim " + std::to_string(view.data->dim) +
                    " != head dim " + std::to_string(head.feature_dim));
  }
  std::vector<Prediction> out;
  out.reserve(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) out.push_back(forward_one(head, view.row(i)));
  return out;
}

// Training targets for a view, one entry per view row.
struct Targets {
  LabelMode mode = LabelMode::Hard;
  std::vector<std::uint32_t> hard;
  std::vector<std::vector<double>> soft;

  std::size_t size() const { return mode == LabelMode::Hard ? hard.size() : soft.size(); }

  static Targets from_labels(const DatasetView& view) {
    Targets t;
    t.mode = LabelMode::Hard;
    t.hard.reserve(view.size());
    for (std::size_t i = 0; i < view.size(); ++i) t.hard.push_back(view.label(i));
    return t;
  }
};

struct HeadGrad {
  std::vector<double> weights;
  std::vector<double> bias;
};

namespace detail {

inline void check_simplex(const std::vector<double>& t) {
  double sum = 0.0;
  for (double v : t) {
    if (v < -1e-9) throw DataError("soft target has negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw DataError("soft target not on the simplex");
}

}  // namespace detail

// Mean cross-entropy and its analytic gradient over the given batch rows.
// batch holds indices into `view`/`targets`.
inline double loss_and_grad(const LinearHead& head, const DatasetView& view,
                            const Targets& targets, const std::vector<std::size_t>& batch,
                            HeadGrad& grad) {
  const std::uint32_t C = head.class_count;
  const std::uint32_t D = head.feature_dim;
  grad.weights.assign(static_cast<std::size_t>(C) * D, 0.0);
  grad.bias.assign(C, 0.0);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> delta(C);
  for (std::size_t bi : batch) {
    const float* x = view.row(bi);
    Prediction pred = forward_one(head, x);
    const double lse_shift = *std::max_element(pred.logits.begin(), pred.logits.end());
    double lse = 0.0;
    for (std::uint32_t c = 0; c < C; ++c) lse += std::exp(pred.logits[c] - lse_shift);
    lse = lse_shift + std::log(lse);
    if (targets.mode == LabelMode::Hard) {
      const std::uint32_t y = targets.hard[bi];
      loss -= pred.logits[y] - lse;
      for (std::uint32_t c = 0; c < C; ++c) delta[c] = pred.probs[c] - (c == y ? 1.0 : 0.0);
    } else {
      const auto& t = targets.soft[bi];
      detail::check_simplex(t);
      for (std::uint32_t c = 0; c < C; ++c) {
        loss -= t[c] * (pred.logits[c] - lse);
        delta[c] = pred.probs[c] - t[c];
      }
    }
    for (std::uint32_t c = 0; c < C; ++c) {
      double* g = grad.weights.data() + static_cast<std::size_t>(c) * D;
      const double dc = delta[c] * inv_b;
      for (std::uint32_t j = 0; j < D; ++j) g[j] += dc * static_cast<double>(x[j]);
      grad.bias[c] += dc;
    }
  }
  return loss * inv_b;
}

// Mini-batch SGD with classical momentum; shuffling is seed-deterministic
// per epoch, total updates capped by config.max_steps. When `init` is given
// training warm-starts from it instead of a fresh head.
inline LinearHead train_probe(const DatasetView& view, const Targets& targets,
                              const TrainConfig& config,
                              const LinearHead* init = nullptr) {
  config.validate();
  if (view.size() == 0) throw DataError("train_probe: empty training set");
  if (targets.size() != view.size()) {
    throw DataError("train_probe: target count != training rows");
  }
  const auto C = static_cast<std::uint32_t>(view.data->class_count);
  const auto D = static_cast<std::uint32_t>(view.data->dim);
  LinearHead head = init ? *init : init_head(C, D, config.seed);
  std::vector<double> vel_w(head.weights.size(), 0.0);
  std::vector<double> vel_b(head.bias.size(), 0.0);
  std::vector<std::size_t> order(view.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  HeadGrad grad;
  long step = 0;
  const long step_cap = config.max_steps ? *config.max_steps
                                         : std::numeric_limits<long>::max();
  for (int epoch = 0; epoch < config.epochs && step < step_cap; ++epoch) {
    Rng rng(mix_seed(config.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size() && step < step_cap;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
      const double loss = loss_and_grad(head, view, targets, batch, grad);
      if (!std::isfinite(loss)) {
        throw RuntimeFailure("train_probe: non-finite loss at step " + std::to_string(step) +
                             " (lr=" + std::to_string(config.learning_rate) + ")");
      }
      for (std::size_t i = 0; i < head.weights.size(); ++i) {
        vel_w[i] = config.momentum * vel_w[i] - config.learning_rate * grad.weights[i];
        head.weights[i] += vel_w[i];
      }
      for (std::size_t i = 0; i < head.bias.size(); ++i) {
        vel_b[i] = config.momentum * vel_b[i] - config.learning_rate * grad.bias[i];
        head.bias[i] += vel_b[i];
      }
      ++step;
    }
  }
  return head;
}

// Fraction of rows whose true label lands in the k most probable classes.
inline double evaluate_topk(const LinearHead& head, const DatasetView& view, std::uint32_t k) {
  if (!view.has_labels()) throw DataError("evaluate_topk: dataset has no labels");
  if (k < 1 || k > head.class_count) throw DataError("evaluate_topk: k out of range");
  if (view.size() == 0) throw DataError("evaluate_topk: empty view");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < view.size(); ++i) {
    Prediction pred = forward_one(head, view.row(i));
    if (in_topk(pred.probs, view.label(i), k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(view.size());
}

// Distance measure between annotations/predictions: 0/1 for hard pairs,
// negative log probability for hard-vs-soft, cross-entropy for soft pairs.
inline double distance(const Annotation& a, const Annotation& b) {
  const bool a_hard = a.mode == LabelMode::Hard;
  const bool b_hard = b.mode == LabelMode::Hard;
  if (a_hard && b_hard) return a.hard == b.hard ? 0.0 : 1.0;
  if (a_hard) return -std::log(std::max(b.soft[a.hard], kProbFloor));
  if (b_hard) return -std::log(std::max(a.soft[b.hard], kProbFloor));
  double ce = 0.0;
  for (std::size_t c = 0; c < a.soft.size(); ++c) {
    ce -= a.soft[c] * std::log(std::max(b.soft[c], kProbFloor));
  }
  return std::max(ce, 0.0);
}

inline Annotation soft_annotation(const Prediction& pred) {
  Annotation a;
  a.mode = LabelMode::Soft;
  a.soft = pred.probs;
  return a;
}

// Head serialization: "CSLH", u32 C, u32 D, float32 row-major weights,
// float32 bias.
inline void save_head(const LinearHead& head, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os.write("CSLH", 4);
  detail::write_bytes(os, &head.class_count, 4);
  detail::write_bytes(os, &head.feature_dim, 4);
  std::vector<float> buf(head.weights.begin(), head.weights.end());
  detail::write_bytes(os, buf.data(), buf.size() * sizeof(float));
  buf.assign(head.bias.begin(), head.bias.end());
  detail::write_bytes(os, buf.data(), buf.size() * sizeof(float));
  if (!os) throw DataError("write failure on '" + path + "'");
}

inline LinearHead load_head(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  char magic[4];
  detail::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, "CSLH", 4) != 0) throw DataError("file '" + path + "': bad magic");
  LinearHead head;
  detail::read_bytes(is, &head.class_count, 4, "class count");
  detail::read_bytes(is, &head.feature_dim, 4, "feature dim");
  std::vector<float> buf(static_cast<std::size_t>(head.class_count) * head.feature_dim);
  detail::read_bytes(is, buf.data(), buf.size() * sizeof(float), "weights");
  head.weights.assign(buf.begin(), buf.end());
  buf.resize(head.class_count);
  detail::read_bytes(is, buf.data(), buf.size() * sizeof(float), "bias");
  head.bias.assign(buf.begin(), buf.end());
  for (double w : head.weights) {
    if (!std::isfinite(w)) throw DataError("file '" + path + "': non-finite weight");
  }
  return head;
}

}  // namespace csl
