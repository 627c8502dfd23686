#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdfusion/autodiff/grad.hpp"
#include "tdfusion/autodiff/param_set.hpp"
#include "tdfusion/image.hpp"
#include "tdfusion/loss.hpp"
#include "tdfusion/networks.hpp"
#include "tdfusion/optim.hpp"
#include "tdfusion/synthdata.hpp"

namespace tdfusion {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 10;       // L
  std::size_t meta_steps = 8;    // M, also the meta subset size
  std::size_t fusion_steps = 0;  // N; 0 means one pass over the data
  double lr_fusion_inner = 1e-4;
  double lr_task_inner = 1e-4;
  double lr_lossgen = 1e-4;
  double lr_fusion = 1e-4;
  double lr_task = 1e-4;
  double alpha = 1.0;
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t classes = 3;
  Optimizer optimizer = Optimizer::Sgd;  // outer and fusion phases only
  bool fixed_half_weights = false;       // baseline: no meta phase, w = 1/2
  std::vector<std::size_t> fusion_hidden = {16, 16, 16};
  std::vector<std::size_t> task_hidden = {16, 16, 16};
  std::vector<std::size_t> lossgen_hidden = {16, 16, 16};
  std::size_t kernel = 3;

  NetSpec fusion_spec() const { return NetSpec::make(NetworkKind::Fusion, fusion_hidden, kernel); }
  NetSpec task_spec() const { return NetSpec::make(NetworkKind::Task, task_hidden, kernel, classes); }
  NetSpec lossgen_spec() const { return NetSpec::make(NetworkKind::LossGen, lossgen_hidden, kernel); }

  std::size_t resolved_fusion_steps(std::size_t dataset_size) const {
    if (fusion_steps != 0) return fusion_steps;
    return (dataset_size + batch_size - 1) / batch_size;
  }

  /// `allow_zero_steps` admits zero step sizes, which only the gradient checker uses.
  void validate(std::size_t dataset_size, bool allow_zero_steps = false) const {
    if (epochs < 1) throw ConfigError("epochs (L) must be >= 1");
    if (meta_steps < 1) throw ConfigError("meta_steps (M) must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    for (double lr : {lr_fusion_inner, lr_task_inner, lr_lossgen, lr_fusion, lr_task}) {
      if (allow_zero_steps ? !(lr >= 0.0) : !(lr > 0.0)) {
        throw ConfigError(allow_zero_steps ? "step sizes must be >= 0" : "all step sizes must be > 0");
      }
    }
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (2 * meta_steps > dataset_size) {
      throw ConfigError("meta subsets do not fit: need 2*M <= dataset size, got M=" + std::to_string(meta_steps) +
                        " with " + std::to_string(dataset_size) + " pairs");
    }
    try {
      fusion_spec().validate();
      task_spec().validate();
      lossgen_spec().validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

/// A stacked mini-batch of pairs as tensors.
struct Batch {
  autodiff::Tensor a;
  autodiff::Tensor b;
  std::vector<int> labels;
};

inline Batch make_batch(const std::vector<ImagePair>& dataset, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<const Image*> as, bs;
  Batch batch;
  for (std::size_t i : indices) {
    const ImagePair& p = dataset.at(i);
    as.push_back(&p.a);
    bs.push_back(&p.b);
    batch.labels.insert(batch.labels.end(), p.labels.begin(), p.labels.end());
  }
  batch.a = to_tensor(as);
  batch.b = to_tensor(bs);
  return batch;
}

struct DatasetSplit {
  std::vector<std::size_t> fusion_train;
  std::vector<std::size_t> meta_train;
  std::vector<std::size_t> meta_test;
};

/// Two disjoint, uniformly drawn subsets of size `meta_size`.
template <class Rng>
DatasetSplit sample_meta_sets(std::size_t dataset_size, std::size_t meta_size, Rng& rng) {
  if (2 * meta_size > dataset_size) {
    throw std::invalid_argument("sample_meta_sets: dataset of " + std::to_string(dataset_size) +
                                " too small for two subsets of " + std::to_string(meta_size));
  }
  DatasetSplit split;
  split.fusion_train.resize(dataset_size);
  std::iota(split.fusion_train.begin(), split.fusion_train.end(), std::size_t{0});
  std::vector<std::size_t> order = split.fusion_train;
  // partial Fisher-Yates over the first 2M slots
  for (std::size_t i = 0; i < 2 * meta_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, dataset_size - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  split.meta_train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(meta_size));
  split.meta_test.assign(order.begin() + static_cast<std::ptrdiff_t>(meta_size),
                         order.begin() + static_cast<std::ptrdiff_t>(2 * meta_size));
  return split;
}

struct WeightStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline WeightStats weight_stats(const autodiff::Tensor& w) {
  const auto d = w.data();
  WeightStats s{0.0, d[0], d[0]};
  for (double v : d) {
    s.mean += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.mean /= static_cast<double>(d.size());
  return s;
}

/// Result of the inner update. The tape holds the retained graph that makes
/// `fusion_prime` a differentiable function of the watched `lossgen`.
struct MetaInner {
  std::unique_ptr<autodiff::Tape> tape;
  ParamSet lossgen;       // leaves on `tape`
  ParamSet fusion_prime;  // on `tape`
  ParamSet task_prime;    // detached
  double fusion_loss = 0.0;
  double intensity = 0.0;
  double gradient = 0.0;
  double task_loss = 0.0;
  WeightStats weights;
};

inline MetaInner inner_update(const Batch& batch, const ParamSet& fusion, const ParamSet& task,
                              const ParamSet& lossgen, const TrainConfig& cfg) {
  using namespace autodiff;
  MetaInner out;
  out.tape = std::make_unique<Tape>();
  out.lossgen = lossgen.watched(*out.tape);
  const ParamSet fusion_leaves = fusion.watched(*out.tape);

  const FusionWeights w = gen_weights(batch.a, batch.b, out.lossgen);
  const Tensor fused = fuse(batch.a, batch.b, fusion_leaves);
  const LossTerms terms = fusion_loss(batch.a, batch.b, fused, w, cfg.alpha);
  const std::vector<Tensor> fusion_grads = grad(terms.total, fusion_leaves, /*retain=*/true);
  out.fusion_prime = sgd_step(fusion_leaves, fusion_grads, cfg.lr_fusion_inner, /*differentiable=*/true);

  Tape task_tape;
  const ParamSet task_leaves = task.watched(task_tape);
  const Tensor task_value = task_loss(task_forward(fused.detach(), task_leaves), batch.labels);
  out.task_prime = sgd_step(task_leaves, grad(task_value, task_leaves, false), cfg.lr_task_inner, false);

  out.fusion_loss = terms.total.item();
  out.intensity = terms.intensity.item();
  out.gradient = terms.gradient.item();
  out.task_loss = task_value.item();
  out.weights = weight_stats(w.w_a);
  return out;
}

/// Task loss of the one-step clones on a batch, recorded on the inner tape.
inline autodiff::Tensor meta_task_loss(const Batch& batch, const MetaInner& inner) {
  return task_loss(task_forward(fuse(batch.a, batch.b, inner.fusion_prime), inner.task_prime), batch.labels);
}

/// d L_t(F'(meta-test)) / d theta_G through the retained inner graph.
inline std::vector<autodiff::Tensor> hypergradient(const Batch& batch, const MetaInner& inner,
                                                   double* task_loss_value = nullptr) {
  bool retained = inner.tape != nullptr && !inner.lossgen.empty() && !inner.fusion_prime.empty();
  for (const auto& [_, t] : inner.lossgen) retained = retained && t.tape() == inner.tape.get();
  for (const auto& [_, t] : inner.fusion_prime) retained = retained && t.tape() == inner.tape.get();
  if (!retained) throw TapeError("outer update needs the retained inner-update graph");
  const autodiff::Tensor loss = meta_task_loss(batch, inner);
  if (task_loss_value != nullptr) *task_loss_value = loss.item();
  return autodiff::grad(loss, inner.lossgen, false);
}

struct OuterResult {
  ParamSet lossgen;
  std::vector<autodiff::Tensor> hypergradient;
  double task_loss = 0.0;
};

inline OuterResult outer_update(const Batch& batch, const MetaInner& inner, const ParamSet& lossgen,
                                const TrainConfig& cfg, AdamState& adam) {
  OuterResult out;
  out.hypergradient = hypergradient(batch, inner, &out.task_loss);
  for (const auto& g : out.hypergradient) {
    for (double v : g.data()) {
      if (!std::isfinite(v)) throw NonFiniteError("non-finite hypergradient");
    }
  }
  out.lossgen = apply_update(lossgen, out.hypergradient, cfg.lr_lossgen, cfg.optimizer, adam);
  return out;
}

struct FusionStep {
  ParamSet fusion;
  ParamSet task;
  double fusion_loss = 0.0;
  double intensity = 0.0;
  double gradient = 0.0;
  double task_loss = 0.0;
  WeightStats weights;
};

/// Weights for the fusion loss: frozen lossgen output, or one half for the baseline.
inline FusionWeights loss_weights(const Batch& batch, const ParamSet& lossgen, const TrainConfig& cfg) {
  if (cfg.fixed_half_weights) return half_weights(batch.a.shape());
  autodiff::NoRecordGuard guard;
  const FusionWeights w = gen_weights(batch.a, batch.b, lossgen.detached());
  return {w.w_a.detach(), w.w_b.detach()};
}

inline FusionStep fusion_update(const Batch& batch, const ParamSet& fusion, const ParamSet& task,
                                const ParamSet& lossgen, const TrainConfig& cfg, AdamState& adam_fusion,
                                AdamState& adam_task) {
  using namespace autodiff;
  FusionStep out;
  const FusionWeights w = loss_weights(batch, lossgen, cfg);

  Tape tape;
  const ParamSet fusion_leaves = fusion.watched(tape);
  const Tensor fused = fuse(batch.a, batch.b, fusion_leaves);
  const LossTerms terms = fusion_loss(batch.a, batch.b, fused, w, cfg.alpha);
  const std::vector<Tensor> fusion_grads = grad(terms.total, fusion_leaves, false);

  Tape task_tape;
  const ParamSet task_leaves = task.watched(task_tape);
  const Tensor task_value = task_loss(task_forward(fused.detach(), task_leaves), batch.labels);
  const std::vector<Tensor> task_grads = grad(task_value, task_leaves, false);

  out.fusion = apply_update(fusion, fusion_grads, cfg.lr_fusion, cfg.optimizer, adam_fusion);
  out.task = apply_update(task, task_grads, cfg.lr_task, cfg.optimizer, adam_task);
  out.fusion_loss = terms.total.item();
  out.intensity = terms.intensity.item();
  out.gradient = terms.gradient.item();
  out.task_loss = task_value.item();
  out.weights = weight_stats(w.w_a);
  return out;
}

enum class Phase { Inner, Outer, Fusion };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Inner: return "inner";
    case Phase::Outer: return "outer";
    case Phase::Fusion: return "fusion";
  }
  return "?";
}

struct LogRecord {
  Phase phase = Phase::Inner;
  std::size_t step = 0;  // 1-based, counted per phase over the run
  std::size_t epoch = 0;
  double fusion_loss = 0.0;
  double intensity = 0.0;
  double gradient = 0.0;
  double task_loss = 0.0;
  WeightStats weights;

  std::string format() const {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "phase=%s step=%zu L_f=%.12g L_int=%.12g L_grad=%.12g L_t=%.12g w_mean=%.12g w_min=%.12g w_max=%.12g",
                  phase_name(phase), step, fusion_loss, intensity, gradient, task_loss, weights.mean, weights.min,
                  weights.max);
    return buf;
  }
};

struct TrainState {
  ParamSet fusion;
  ParamSet task;
  ParamSet lossgen;
  std::size_t epoch = 0;
  std::vector<LogRecord> log;
  AdamState adam_fusion;
  AdamState adam_task;
  AdamState adam_lossgen;
  std::mt19937_64 meta_rng;
  std::mt19937_64 fusion_rng;
};

inline TrainState init_state(const TrainConfig& cfg) {
  TrainState s;
  s.fusion = init_params(cfg.fusion_spec(), derive_seed(cfg.seed, 0xF0));
  s.task = init_params(cfg.task_spec(), derive_seed(cfg.seed, 0x70));
  s.lossgen = init_params(cfg.lossgen_spec(), derive_seed(cfg.seed, 0x60));
  s.meta_rng.seed(derive_seed(cfg.seed, 0x3E7A));
  s.fusion_rng.seed(derive_seed(cfg.seed, 0xF05E));
  return s;
}

/// Called after every update with the record just appended.
using UpdateObserver = std::function<void(const LogRecord&, const TrainState&)>;

/// The alternating schedule: per epoch, M meta steps (inner + outer) on fresh
/// disjoint meta subsets, then N fusion steps over the whole training set.
inline TrainState run(const std::vector<ImagePair>& dataset, const TrainConfig& cfg,
                      const UpdateObserver& observer = nullptr) {
  cfg.validate(dataset.size());
  for (const ImagePair& p : dataset) {
    if (p.a.height != cfg.height || p.a.width != cfg.width) {
      throw ConfigError("dataset image size does not match the configured " + std::to_string(cfg.height) + "x" +
                        std::to_string(cfg.width));
    }
  }
  TrainState state = init_state(cfg);
  const std::size_t fusion_steps = cfg.resolved_fusion_steps(dataset.size());
  std::size_t inner_count = 0, outer_count = 0, fusion_count = 0;

  auto emit = [&](const LogRecord& r) {
    state.log.push_back(r);
    if (observer) observer(state.log.back(), state);
  };
  auto guarded = [&](Phase phase, std::size_t step, auto&& body) {
    try {
      body();
    } catch (const NonFiniteError& e) {
      throw TrainingAborted(std::string("non-finite value in ") + phase_name(phase) + " step " +
                            std::to_string(step) + " (epoch " + std::to_string(state.epoch) + "): " + e.what());
    }
  };
  auto sample_from = [&](const std::vector<std::size_t>& pool) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<std::size_t> idx(cfg.batch_size);
    for (auto& i : idx) i = pool[pick(state.meta_rng)];
    return idx;
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    state.epoch = epoch;
    if (!cfg.fixed_half_weights) {
      const DatasetSplit split = sample_meta_sets(dataset.size(), cfg.meta_steps, state.meta_rng);
      for (std::size_t step = 0; step < cfg.meta_steps; ++step) {
        const Batch train_batch = make_batch(dataset, sample_from(split.meta_train));
        const Batch test_batch = make_batch(dataset, sample_from(split.meta_test));
        MetaInner inner;
        guarded(Phase::Inner, inner_count + 1, [&] {
          inner = inner_update(train_batch, state.fusion, state.task, state.lossgen, cfg);
        });
        emit({Phase::Inner, ++inner_count, epoch, inner.fusion_loss, inner.intensity, inner.gradient,
              inner.task_loss, inner.weights});

        OuterResult outer;
        guarded(Phase::Outer, outer_count + 1, [&] {
          outer = outer_update(test_batch, inner, state.lossgen, cfg, state.adam_lossgen);
        });
        state.lossgen = outer.lossgen;
        const WeightStats after = weight_stats(loss_weights(test_batch, state.lossgen, cfg).w_a);
        emit({Phase::Outer, ++outer_count, epoch, inner.fusion_loss, inner.intensity, inner.gradient,
              outer.task_loss, after});
      }
    }

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.fusion_rng);
    for (std::size_t step = 0; step < fusion_steps; ++step) {
      std::vector<std::size_t> idx(cfg.batch_size);
      for (std::size_t k = 0; k < cfg.batch_size; ++k) idx[k] = order[(step * cfg.batch_size + k) % order.size()];
      const Batch batch = make_batch(dataset, idx);
      FusionStep fs;
      guarded(Phase::Fusion, fusion_count + 1, [&] {
        fs = fusion_update(batch, state.fusion, state.task, state.lossgen, cfg, state.adam_fusion, state.adam_task);
      });
      state.fusion = fs.fusion;
      state.task = fs.task;
      emit({Phase::Fusion, ++fusion_count, epoch, fs.fusion_loss, fs.intensity, fs.gradient, fs.task_loss,
            fs.weights});
    }
  }
  return state;
}

/// Per-pixel argmax accuracy of the task network on fused images.
inline double task_accuracy(const std::vector<ImagePair>& dataset, const ParamSet& fusion, const ParamSet& task) {
  std::size_t correct = 0, total = 0;
  for (const ImagePair& p : dataset) {
    const autodiff::Tensor logits = task_forward(fuse(to_tensor(p.a), to_tensor(p.b), fusion), task);
    const std::size_t c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
    const auto d = logits.data();
    for (std::size_t q = 0; q < plane; ++q) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (d[k * plane + q] > d[best * plane + q]) best = k;
      }
      correct += static_cast<int>(best) == p.labels[q] ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

/// Mean w_a per pixel class under the given lossgen parameters.
struct WeightPreference {
  double background = 0.0;
  double target = 0.0;
  double texture = 0.0;
};

inline WeightPreference weight_preference(const std::vector<ImagePair>& dataset, const ParamSet& lossgen) {
  double sum[kClassCount] = {0.0, 0.0, 0.0};
  std::size_t count[kClassCount] = {0, 0, 0};
  for (const ImagePair& p : dataset) {
    const auto w = gen_weights(to_tensor(p.a), to_tensor(p.b), lossgen).w_a;
    const auto d = w.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      sum[p.labels[i]] += d[i];
      ++count[p.labels[i]];
    }
  }
  auto avg = [&](int c) { return count[c] == 0 ? 0.0 : sum[c] / static_cast<double>(count[c]); };
  return {avg(0), avg(1), avg(2)};
}

}  // namespace tdfusion
