#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdfusion/image.hpp"

namespace tdfusion {

enum class PixelClass : int { Background = 0, Target = 1, Texture = 2 };

inline constexpr int kClassCount = 3;

/// Scene layout and intensity levels for the synthetic two-modality data.
///
/// Targets are bright discs visible only in modality a. Texture patches are
/// stripes visible only in modality b. Each shows at background level in
/// the other modality.
struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t targets_min = 5;
  std::size_t targets_max = 7;
  double target_radius_min = 5.0;
  double target_radius_max = 9.0;
  std::size_t patches_min = 4;
  std::size_t patches_max = 6;
  std::size_t patch_size_min = 12;
  std::size_t patch_size_max = 22;
  std::size_t stripe_period = 4;
  double a_background = 0.1;
  double a_target = 0.9;
  double b_background = 0.5;
  double b_stripe_amplitude = 0.3;
  double noise = 0.05;
  bool identical_modalities = false;  // b := a, for sanity checks

  void validate() const {
    auto fail = [](const std::string& why) { throw std::invalid_argument("scene spec: " + why); };
    if (height < 8 || width < 8) fail("canvas must be at least 8x8");
    if (targets_min > targets_max || patches_min > patches_max) fail("count ranges are inverted");
    if (target_radius_min <= 0 || target_radius_min > target_radius_max) fail("bad target radius range");
    if (patch_size_min == 0 || patch_size_min > patch_size_max) fail("bad patch size range");
    const double canvas = static_cast<double>(std::min(height, width));
    if (2.0 * target_radius_max + 1.0 > canvas) fail("targets do not fit on the canvas");
    if (static_cast<double>(patch_size_max) > canvas) fail("texture patches do not fit on the canvas");
    if (stripe_period < 2 || stripe_period % 2 != 0) fail("stripe period must be even and >= 2");
    if (std::abs(a_target - a_background) < 0.3) fail("targets must differ from background by >= 0.3 in a");
    if (b_stripe_amplitude < 0.3) fail("stripe amplitude must be >= 0.3 in b");
    if (noise < 0) fail("noise amplitude must be non-negative");
    for (double v : {a_background, a_target, b_background - b_stripe_amplitude, b_background + b_stripe_amplitude}) {
      if (v < 0.0 || v > 1.0) fail("intensity levels must lie in [0,1]");
    }
  }
};

struct ImagePair {
  Image a;  // infrared-like
  Image b;  // visible-like
  std::vector<int> labels;

  std::vector<bool> mask(PixelClass cls) const {
    std::vector<bool> m(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == static_cast<int>(cls);
    return m;
  }
};

/// splitmix64 finalizer; item seeds for gen_dataset.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline ImagePair gen_pair(const SceneSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  auto uniform_int = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  ImagePair pair{Image(h, w, spec.a_background), Image(h, w, spec.b_background), std::vector<int>(h * w, 0)};
  std::vector<double> stripes(h * w, 0.0);

  const std::size_t half = spec.stripe_period / 2;
  const std::size_t patches = uniform_int(spec.patches_min, spec.patches_max);
  for (std::size_t p = 0; p < patches; ++p) {
    const std::size_t ph = uniform_int(spec.patch_size_min, spec.patch_size_max);
    const std::size_t pw = uniform_int(spec.patch_size_min, spec.patch_size_max);
    const std::size_t top = uniform_int(0, h - ph);
    const std::size_t left = uniform_int(0, w - pw);
    const bool vertical = uniform_int(0, 1) == 1;
    const std::size_t phase = uniform_int(0, spec.stripe_period - 1);
    for (std::size_t i = top; i < top + ph; ++i) {
      for (std::size_t j = left; j < left + pw; ++j) {
        const std::size_t coord = (vertical ? j : i) + phase;
        pair.labels[i * w + j] = static_cast<int>(PixelClass::Texture);
        stripes[i * w + j] = ((coord / half) % 2 == 0) ? 1.0 : -1.0;
      }
    }
  }

  const std::size_t targets = uniform_int(spec.targets_min, spec.targets_max);
  for (std::size_t t = 0; t < targets; ++t) {
    const double r = uniform(spec.target_radius_min, spec.target_radius_max);
    const double ci = uniform(r, static_cast<double>(h - 1) - r);
    const double cj = uniform(r, static_cast<double>(w - 1) - r);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double di = static_cast<double>(i) - ci, dj = static_cast<double>(j) - cj;
        if (di * di + dj * dj <= r * r) pair.labels[i * w + j] = static_cast<int>(PixelClass::Target);
      }
    }
  }

  std::uniform_real_distribution<double> noise(-spec.noise, spec.noise);
  for (std::size_t k = 0; k < h * w; ++k) {
    const auto cls = static_cast<PixelClass>(pair.labels[k]);
    if (cls == PixelClass::Target) pair.a.pixels[k] = spec.a_target;
    if (cls == PixelClass::Texture) pair.b.pixels[k] = spec.b_background + spec.b_stripe_amplitude * stripes[k];
  }
  for (double& v : pair.a.pixels) v = std::clamp(v + noise(rng), 0.0, 1.0);
  for (double& v : pair.b.pixels) v = std::clamp(v + noise(rng), 0.0, 1.0);
  if (spec.identical_modalities) pair.b = pair.a;
  return pair;
}

/// `count` independent pairs; item i depends only on (spec, seed, i).
inline std::vector<ImagePair> gen_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed) {
  if (count < 4) throw std::invalid_argument("gen_dataset: need at least 4 pairs, got " + std::to_string(count));
  std::vector<ImagePair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    out.push_back(gen_pair(spec, rng));
  }
  return out;
}

}  // namespace tdfusion
