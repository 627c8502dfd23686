#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdfusion/autodiff/tensor.hpp"

namespace tdfusion {

/// Row-major single-channel image.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}
  Image(std::size_t h, std::size_t w, std::vector<double> values) : height(h), width(w), pixels(std::move(values)) {
    if (pixels.size() != h * w) throw ShapeError("image data length does not match " + std::to_string(h) + "x" + std::to_string(w));
  }

  std::size_t size() const { return pixels.size(); }
  double& at(std::size_t i, std::size_t j) { return pixels[i * width + j]; }
  double at(std::size_t i, std::size_t j) const { return pixels[i * width + j]; }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

/// Stacks equally sized images into an [N,1,H,W] tensor.
inline autodiff::Tensor to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("to_tensor: no images");
  const std::size_t h = images.front()->height, w = images.front()->width;
  std::vector<double> data;
  data.reserve(images.size() * h * w);
  for (const Image* im : images) {
    if (im->height != h || im->width != w) throw ShapeError("to_tensor: images differ in size");
    data.insert(data.end(), im->pixels.begin(), im->pixels.end());
  }
  return autodiff::Tensor({images.size(), 1, h, w}, std::move(data));
}

inline autodiff::Tensor to_tensor(const Image& image) { return to_tensor(std::vector<const Image*>{&image}); }

/// Plane `index` of an [N,1,H,W] tensor.
inline Image image_from(const autodiff::Tensor& batch, std::size_t index = 0) {
  if (batch.rank() != 4 || batch.dim(1) != 1 || index >= batch.dim(0)) {
    throw ShapeError("image_from: expected [N,1,H,W] tensor, got " + to_string(batch.shape()));
  }
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  const auto d = batch.data();
  return Image(h, w, std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(index * h * w),
                                         d.begin() + static_cast<std::ptrdiff_t>((index + 1) * h * w)));
}

}  // namespace tdfusion
