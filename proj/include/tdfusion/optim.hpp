#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tdfusion/autodiff/param_set.hpp"

namespace tdfusion {

enum class Optimizer { Sgd, Adam };

inline std::string_view optimizer_name(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

inline Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::Sgd;
  if (name == "adam") return Optimizer::Adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

/// First and second moment estimates for one parameter set.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t steps = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
};

/// Non-differentiable Adam step; the result is detached.
inline ParamSet adam_step(const ParamSet& params, const std::vector<autodiff::Tensor>& grads, double lr,
                          AdamState& state) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: gradient count mismatch");
  if (state.first.empty()) {
    for (const auto& [_, t] : params) {
      state.first.emplace_back(t.numel(), 0.0);
      state.second.emplace_back(t.numel(), 0.0);
    }
  }
  if (state.first.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  std::vector<autodiff::Tensor> next;
  next.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto p = params[i].data();
    const auto g = grads[i].data();
    if (g.size() != p.size()) throw ShapeError("adam_step: gradient for '" + params.name(i) + "' has wrong size");
    auto& m = state.first[i];
    auto& v = state.second[i];
    std::vector<double> out(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      out[k] = p[k] - lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.epsilon);
    }
    next.emplace_back(params[i].shape(), std::move(out));
  }
  return params.with_tensors(std::move(next));
}

/// Detached update with the configured optimizer.
inline ParamSet apply_update(const ParamSet& params, const std::vector<autodiff::Tensor>& grads, double lr,
                             Optimizer optimizer, AdamState& state) {
  if (optimizer == Optimizer::Adam) return adam_step(params.detached(), grads, lr, state);
  return sgd_step(params.detached(), grads, lr, false);
}

}  // namespace tdfusion
