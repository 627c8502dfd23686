#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tdfusion/autodiff/grad.hpp"
#include "tdfusion/autodiff/ops.hpp"

namespace testsupport {

using tdfusion::Shape;
using tdfusion::autodiff::Tensor;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0,
                            double avoid = 0.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(tdfusion::numel(shape));
  for (double& x : v) {
    do {
      x = u(rng);
    } while (std::abs(x) < avoid);
  }
  return Tensor(shape, std::move(v));
}

inline double rel_error(const std::vector<double>& x, const std::vector<double>& ref) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff = std::max(diff, std::abs(x[i] - ref[i]));
    scale = std::max(scale, std::abs(ref[i]));
  }
  return scale == 0.0 ? diff : diff / scale;
}

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// Central differences of a scalar function of several tensors, input by input.
inline std::vector<std::vector<double>> numeric_gradient(
    const std::function<double(const std::vector<Tensor>&)>& f, const std::vector<Tensor>& inputs,
    double eps = 1e-5) {
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> base = values(inputs[k]);
    std::vector<double> g(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto perturbed = [&](double delta) {
        std::vector<double> v = base;
        v[i] += delta;
        std::vector<Tensor> args = inputs;
        args[k] = Tensor(inputs[k].shape(), v);
        return f(args);
      };
      g[i] = (perturbed(eps) - perturbed(-eps)) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace testsupport
