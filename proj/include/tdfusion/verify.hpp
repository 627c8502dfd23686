#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "tdfusion/trainer.hpp"

// Brute-force checks of the meta-learning hypergradient on small problems.
//
// The finite-difference paths below evaluate losses with plain forward passes
// and never build a retained graph, so they do not share the code path being
// checked.

namespace tdfusion::verify {

/// Normwise relative error max|x - ref| / max|ref|; 0 when both are zero.
inline double relative_error(const std::vector<double>& x, const std::vector<double>& ref) {
  if (x.size() != ref.size()) throw std::invalid_argument("relative_error: length mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff = std::max(diff, std::abs(x[i] - ref[i]));
    scale = std::max(scale, std::abs(ref[i]));
  }
  if (scale == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / scale;
}

inline std::vector<double> flatten(const std::vector<autodiff::Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

/// One frozen meta step: parameters plus a meta-train and a meta-test batch.
struct MetaProblem {
  TrainConfig cfg;
  ParamSet fusion;
  ParamSet task;
  ParamSet lossgen;
  Batch meta_train;
  Batch meta_test;

  std::size_t parameter_count() const {
    return fusion.parameter_count() + task.parameter_count() + lossgen.parameter_count();
  }
};

/// Synthetic scene small enough for toy checks on an HxW canvas.
inline SceneSpec toy_scene(std::size_t height, std::size_t width) {
  SceneSpec s;
  s.height = height;
  s.width = width;
  const double canvas = static_cast<double>(std::min(height, width));
  s.target_radius_min = std::max(1.0, canvas / 8.0);
  s.target_radius_max = std::max(s.target_radius_min, (canvas - 1.0) / 2.0 - 0.5);
  s.targets_min = 1;
  s.targets_max = 2;
  s.patch_size_min = std::max<std::size_t>(2, std::min(height, width) / 3);
  s.patch_size_max = std::min(height, width) - 1;
  s.patches_min = 1;
  s.patches_max = 2;
  return s;
}

/// Builds a problem at a generic point: every lossgen parameter, including
/// the head, is randomly initialized so the weights are not all one half.
inline MetaProblem make_problem(const TrainConfig& cfg) {
  const std::size_t pairs = std::max<std::size_t>(4, 2 * cfg.batch_size);
  const std::vector<ImagePair> data = gen_dataset(toy_scene(cfg.height, cfg.width), pairs, cfg.seed);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5EED));
  const DatasetSplit split = sample_meta_sets(data.size(), pairs / 2, rng);
  auto take = [&](const std::vector<std::size_t>& idx) {
    return make_batch(data, std::vector<std::size_t>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cfg.batch_size)));
  };
  MetaProblem p;
  p.cfg = cfg;
  p.fusion = init_params(cfg.fusion_spec(), derive_seed(cfg.seed, 0xF0));
  p.task = init_params(cfg.task_spec(), derive_seed(cfg.seed, 0x70));
  p.lossgen = init_params(cfg.lossgen_spec(), derive_seed(cfg.seed, 0x60), /*zero_lossgen_head=*/false);
  p.meta_train = take(split.meta_train);
  p.meta_test = take(split.meta_test);
  return p;
}

/// Hypergradient through the trainer's retained inner-update graph.
inline std::vector<double> ad_hypergradient(const MetaProblem& p) {
  const MetaInner inner = inner_update(p.meta_train, p.fusion, p.task, p.lossgen, p.cfg);
  return flatten(hypergradient(p.meta_test, inner));
}

namespace detail {

inline double fusion_loss_value(const Batch& batch, const ParamSet& fusion, const ParamSet& lossgen, double alpha) {
  autodiff::NoRecordGuard guard;
  const FusionWeights w = gen_weights(batch.a, batch.b, lossgen);
  return fusion_loss(batch.a, batch.b, fuse(batch.a, batch.b, fusion), w, alpha).total.item();
}

inline double task_loss_value(const Batch& batch, const ParamSet& fusion, const ParamSet& task) {
  autodiff::NoRecordGuard guard;
  return task_loss(task_forward(fuse(batch.a, batch.b, fusion), task), batch.labels).item();
}

/// Plain first-order gradient on a fresh tape.
inline std::vector<autodiff::Tensor> first_order(const ParamSet& params, const auto& loss_of) {
  autodiff::Tape tape;
  const ParamSet leaves = params.watched(tape);
  return autodiff::grad(loss_of(leaves), leaves, false);
}

inline ParamSet one_step(const ParamSet& params, const std::vector<autodiff::Tensor>& g, double eta) {
  std::vector<double> flat = params.flatten();
  const std::vector<double> gf = flatten(g);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= eta * gf[i];
  return params.unflatten(flat);
}

/// The task network after its inner step; it does not depend on lossgen.
inline ParamSet task_prime(const MetaProblem& p) {
  const autodiff::Tensor fused = [&] {
    autodiff::NoRecordGuard guard;
    return fuse(p.meta_train.a, p.meta_train.b, p.fusion);
  }();
  const auto g = first_order(p.task, [&](const ParamSet& t) {
    return task_loss(task_forward(fused, t), p.meta_train.labels);
  });
  return one_step(p.task, g, p.cfg.lr_task_inner);
}

}  // namespace detail

/// Meta-test task loss after one inner step taken with the given lossgen.
inline double meta_objective(const MetaProblem& p, const ParamSet& lossgen, const ParamSet& task_prime) {
  const auto g = detail::first_order(p.fusion, [&](const ParamSet& f) {
    const FusionWeights w = gen_weights(p.meta_train.a, p.meta_train.b, lossgen.detached());
    return fusion_loss(p.meta_train.a, p.meta_train.b, fuse(p.meta_train.a, p.meta_train.b, f), w, p.cfg.alpha)
        .total;
  });
  const ParamSet fusion_prime = detail::one_step(p.fusion, g, p.cfg.lr_fusion_inner);
  return detail::task_loss_value(p.meta_test, fusion_prime, task_prime);
}

/// Central differences over the complete inner + outer chain, one lossgen
/// coordinate at a time.
inline std::vector<double> fd_hypergradient(const MetaProblem& p, double eps = 1e-5) {
  const ParamSet task_prime = detail::task_prime(p);
  std::vector<double> theta = p.lossgen.flatten();
  std::vector<double> out(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double saved = theta[j];
    theta[j] = saved + eps;
    const double up = meta_objective(p, p.lossgen.unflatten(theta), task_prime);
    theta[j] = saved - eps;
    const double down = meta_objective(p, p.lossgen.unflatten(theta), task_prime);
    theta[j] = saved;
    out[j] = (up - down) / (2.0 * eps);
  }
  return out;
}

/// -η_F'·(∂L_t/∂θ_F')ᵀ·∂²L_f/∂θ_F∂θ_G, all by finite differences. The
/// mixed partial is taken along u = ∂L_t/∂θ_F', so each lossgen coordinate
/// costs four loss evaluations.
inline std::vector<double> expansion_hypergradient(const MetaProblem& p, double eps = 1e-4) {
  const ParamSet task_prime = detail::task_prime(p);

  // θ_F' at the unperturbed lossgen
  const auto g = detail::first_order(p.fusion, [&](const ParamSet& f) {
    const FusionWeights w = gen_weights(p.meta_train.a, p.meta_train.b, p.lossgen.detached());
    return fusion_loss(p.meta_train.a, p.meta_train.b, fuse(p.meta_train.a, p.meta_train.b, f), w, p.cfg.alpha)
        .total;
  });
  std::vector<double> fprime = detail::one_step(p.fusion, g, p.cfg.lr_fusion_inner).flatten();

  std::vector<double> u(fprime.size());
  for (std::size_t i = 0; i < fprime.size(); ++i) {
    const double saved = fprime[i];
    fprime[i] = saved + eps;
    const double up = detail::task_loss_value(p.meta_test, p.fusion.unflatten(fprime), task_prime);
    fprime[i] = saved - eps;
    const double down = detail::task_loss_value(p.meta_test, p.fusion.unflatten(fprime), task_prime);
    fprime[i] = saved;
    u[i] = (up - down) / (2.0 * eps);
  }
  double unorm = 0.0;
  for (double v : u) unorm = std::max(unorm, std::abs(v));
  std::vector<double> out(p.lossgen.parameter_count(), 0.0);
  if (unorm == 0.0) return out;

  const std::vector<double> theta_f = p.fusion.flatten();
  std::vector<double> theta_g = p.lossgen.flatten();
  const double ds = eps / unorm;
  auto lf = [&](double s, std::size_t j, double t) {
    std::vector<double> f = theta_f;
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += s * u[i];
    const double saved = theta_g[j];
    theta_g[j] = saved + t;
    const double v = detail::fusion_loss_value(p.meta_train, p.fusion.unflatten(f), p.lossgen.unflatten(theta_g),
                                               p.cfg.alpha);
    theta_g[j] = saved;
    return v;
  };
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double mixed = (lf(ds, j, eps) - lf(ds, j, -eps) - lf(-ds, j, eps) + lf(-ds, j, -eps)) / (4.0 * ds * eps);
    out[j] = -p.cfg.lr_fusion_inner * mixed;
  }
  return out;
}

struct GradCheckReport {
  std::size_t parameters = 0;
  std::vector<double> ad;
  std::vector<double> finite_difference;
  std::vector<double> expansion;
  double fd_error = 0.0;
  double expansion_error = 0.0;
};

inline GradCheckReport check_hypergradient(const MetaProblem& p) {
  GradCheckReport r;
  r.parameters = p.parameter_count();
  r.ad = ad_hypergradient(p);
  r.finite_difference = fd_hypergradient(p);
  r.expansion = expansion_hypergradient(p);
  r.fd_error = relative_error(r.ad, r.finite_difference);
  r.expansion_error = relative_error(r.ad, r.expansion);
  return r;
}

}  // namespace tdfusion::verify
