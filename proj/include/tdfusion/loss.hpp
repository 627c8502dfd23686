#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tdfusion/autodiff/ops.hpp"
#include "tdfusion/networks.hpp"

namespace tdfusion {

/// Components of the learnable fusion loss; total = intensity + alpha * gradient.
struct LossTerms {
  autodiff::Tensor total;
  autodiff::Tensor intensity;
  autodiff::Tensor gradient;
  double alpha = 1.0;
};

/// Sobel kernels stacked as a [2,1,3,3] weight: horizontal then vertical response.
inline autodiff::Tensor sobel_kernels() {
  return autodiff::Tensor({2, 1, 3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1,  //
                                         -1, -2, -1, 0, 0, 0, 1, 2, 1});
}

/// |Gx * I| + |Gy * I| with reflect padding, for [N,1,H,W] images.
inline autodiff::Tensor sobel_magnitude(const autodiff::Tensor& image) {
  if (image.rank() != 4 || image.dim(1) != 1) {
    throw ShapeError("sobel_magnitude: expected [N,1,H,W] image, got " + to_string(image.shape()));
  }
  if (image.dim(2) < 2 || image.dim(3) < 2) throw ShapeError("sobel_magnitude: image smaller than 2x2");
  using namespace autodiff;
  return channel_sum(abs(conv2d(image, sobel_kernels())));
}

inline void check_simplex(const FusionWeights& w, const Shape& image_shape, double tolerance = 1e-9) {
  if (w.w_a.shape() != image_shape || w.w_b.shape() != image_shape) {
    throw ShapeError("fusion weights shape does not match images " + to_string(image_shape));
  }
  const auto a = w.w_a.data();
  const auto b = w.w_b.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < -tolerance || b[i] < -tolerance || std::abs(a[i] + b[i] - 1.0) > tolerance) {
      throw std::invalid_argument("fusion weights leave the simplex at pixel " + std::to_string(i));
    }
  }
}

/// Weighted intensity term plus gradient-maximum term.
inline LossTerms fusion_loss(const autodiff::Tensor& image_a, const autodiff::Tensor& image_b,
                             const autodiff::Tensor& fused, const FusionWeights& w, double alpha) {
  using namespace autodiff;
  if (image_a.shape() != image_b.shape() || fused.shape() != image_a.shape()) {
    throw ShapeError("fusion_loss: image shapes " + to_string(image_a.shape()) + ", " +
                     to_string(image_b.shape()) + ", " + to_string(fused.shape()) + " differ");
  }
  check_simplex(w, image_a.shape());

  LossTerms terms;
  terms.alpha = alpha;
  terms.intensity = mean(add(mul(w.w_a, square(sub(fused, image_a))), mul(w.w_b, square(sub(fused, image_b)))));
  const Tensor source_edges = maximum(sobel_magnitude(image_a), sobel_magnitude(image_b));
  terms.gradient = mean(abs(sub(sobel_magnitude(fused), source_edges)));
  terms.total = add(terms.intensity, scale(terms.gradient, alpha));
  return terms;
}

/// Mean per-pixel cross-entropy; labels are [N,H,W] in [0, C).
inline autodiff::Tensor task_loss(const autodiff::Tensor& logits, const std::vector<int>& labels) {
  return autodiff::cross_entropy(logits, labels);
}

}  // namespace tdfusion
