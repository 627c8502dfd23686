#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tdfusion/autodiff/ops.hpp"
#include "tdfusion/autodiff/param_set.hpp"

namespace tdfusion {

/// Architecture of a plain convolution stack.
///
/// Layer count is `hidden.size() + 1`; every hidden layer is followed by a
/// ReLU. The head activation depends on the network kind.
struct NetSpec {
  NetworkKind kind = NetworkKind::Fusion;
  std::size_t in_channels = 2;
  std::vector<std::size_t> hidden = {16, 16, 16};
  std::size_t out_channels = 1;
  std::vector<std::size_t> kernels = {3, 3, 3, 3};  // one per layer
  bool bias = true;

  std::size_t layer_count() const { return hidden.size() + 1; }

  void validate() const {
    auto fail = [&](const std::string& why) {
      throw std::invalid_argument(std::string(network_name(kind)) + " spec: " + why);
    };
    if (in_channels == 0 || out_channels == 0) fail("channel counts must be positive");
    for (std::size_t w : hidden) {
      if (w == 0) fail("hidden widths must be positive");
    }
    if (kernels.size() != layer_count()) fail("need one kernel size per layer");
    for (std::size_t k : kernels) {
      if (k == 0 || k % 2 == 0) fail("kernel sizes must be positive and odd");
    }
    switch (kind) {
      case NetworkKind::Fusion:
        if (in_channels != 2 || out_channels != 1) fail("fusion net maps 2 channels to 1");
        break;
      case NetworkKind::LossGen:
        if (in_channels != 2 || out_channels != 2) fail("lossgen net maps 2 channels to 2");
        break;
      case NetworkKind::Task:
        if (in_channels != 1) fail("task net takes the 1-channel fused image");
        break;
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0, in = in_channels;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const std::size_t out = l < hidden.size() ? hidden[l] : out_channels;
      n += out * in * kernels[l] * kernels[l] + (bias ? out : 0);
      in = out;
    }
    return n;
  }

  static NetSpec make(NetworkKind kind, std::vector<std::size_t> hidden, std::size_t kernel,
                      std::size_t classes = 3) {
    NetSpec s;
    s.kind = kind;
    s.in_channels = kind == NetworkKind::Task ? 1 : 2;
    s.out_channels = kind == NetworkKind::Fusion ? 1 : (kind == NetworkKind::LossGen ? 2 : classes);
    s.hidden = std::move(hidden);
    s.kernels.assign(s.hidden.size() + 1, kernel);
    return s;
  }

  static NetSpec fusion() { return make(NetworkKind::Fusion, {16, 16, 16}, 3); }
  static NetSpec task(std::size_t classes = 3) { return make(NetworkKind::Task, {16, 16, 16}, 3, classes); }
  static NetSpec lossgen() { return make(NetworkKind::LossGen, {16, 16, 16}, 3); }
};

inline std::string layer_weight_name(std::size_t layer) { return "conv" + std::to_string(layer) + ".weight"; }
inline std::string layer_bias_name(std::size_t layer) { return "conv" + std::to_string(layer) + ".bias"; }

/// Deterministic He-uniform weights and zero biases. The lossgen head is
/// all zeros unless `zero_lossgen_head` is cleared, so the first generated
/// weights are exactly one half.
inline ParamSet init_params(const NetSpec& spec, std::uint64_t seed, bool zero_lossgen_head = true) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ParamSet params(spec.kind);
  std::size_t in = spec.in_channels;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const bool head = l + 1 == spec.layer_count();
    const std::size_t out = head ? spec.out_channels : spec.hidden[l];
    const std::size_t k = spec.kernels[l];
    const std::size_t fan_in = in * k * k;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(out * in * k * k);
    for (double& v : w) v = dist(rng);
    if (head && spec.kind == NetworkKind::LossGen && zero_lossgen_head) std::fill(w.begin(), w.end(), 0.0);
    params.add(layer_weight_name(l), autodiff::Tensor({out, in, k, k}, std::move(w)));
    if (spec.bias) params.add(layer_bias_name(l), autodiff::Tensor::zeros({out}));
    in = out;
  }
  return params;
}

namespace detail {

/// Runs the convolution stack described by the parameter names; returns the
/// pre-activation output of the head.
inline autodiff::Tensor conv_stack(const autodiff::Tensor& input, const ParamSet& params) {
  using namespace autodiff;
  if (!params.contains(layer_weight_name(0))) throw std::invalid_argument("parameter set holds no convolution layers");
  Tensor x = input;
  for (std::size_t l = 0; params.contains(layer_weight_name(l)); ++l) {
    const Tensor& w = params.at(layer_weight_name(l));
    if (x.dim(1) != w.dim(1)) {
      throw ShapeError("layer " + std::to_string(l) + " expects " + std::to_string(w.dim(1)) +
                       " input channels, got " + to_string(x.shape()));
    }
    const std::string bname = layer_bias_name(l);
    Tensor y = params.contains(bname) ? conv2d(x, w, params.at(bname)) : conv2d(x, w);
    x = params.contains(layer_weight_name(l + 1)) ? relu(y) : y;
  }
  return x;
}

inline void require_image_pair(const autodiff::Tensor& a, const autodiff::Tensor& b, const char* op) {
  if (a.rank() != 4 || a.dim(1) != 1) {
    throw ShapeError(std::string(op) + ": expected [N,1,H,W] images, got " + to_string(a.shape()));
  }
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": image shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}

}  // namespace detail

/// Fused image in [0,1] from two [N,1,H,W] modalities.
inline autodiff::Tensor fuse(const autodiff::Tensor& image_a, const autodiff::Tensor& image_b,
                             const ParamSet& fusion_params) {
  detail::require_image_pair(image_a, image_b, "fuse");
  return autodiff::sigmoid(detail::conv_stack(autodiff::concat_channels(image_a, image_b), fusion_params));
}

/// Per-pixel class logits [N,C,H,W] for a fused image [N,1,H,W].
inline autodiff::Tensor task_forward(const autodiff::Tensor& fused, const ParamSet& task_params) {
  if (fused.rank() != 4 || fused.dim(1) != 1) {
    throw ShapeError("task_forward: expected [N,1,H,W] image, got " + to_string(fused.shape()));
  }
  return detail::conv_stack(fused, task_params);
}

/// Per-pixel loss weights; w_a + w_b = 1 by a channel softmax.
struct FusionWeights {
  autodiff::Tensor w_a;
  autodiff::Tensor w_b;
};

inline FusionWeights gen_weights(const autodiff::Tensor& image_a, const autodiff::Tensor& image_b,
                                 const ParamSet& lossgen_params) {
  detail::require_image_pair(image_a, image_b, "gen_weights");
  const autodiff::Tensor logits = detail::conv_stack(autodiff::concat_channels(image_a, image_b), lossgen_params);
  if (logits.dim(1) != 2) throw ShapeError("gen_weights: lossgen head must have 2 channels");
  const autodiff::Tensor w = autodiff::softmax_channels(logits);
  return {autodiff::slice_channels(w, 0, 1), autodiff::slice_channels(w, 1, 1)};
}

/// Constant one-half weights of the fixed-loss baseline.
inline FusionWeights half_weights(const Shape& image_shape) {
  return {autodiff::Tensor::full(image_shape, 0.5), autodiff::Tensor::full(image_shape, 0.5)};
}

}  // namespace tdfusion
