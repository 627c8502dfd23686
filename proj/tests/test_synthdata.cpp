#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <random>

#include "tdfusion/synthdata.hpp"

using namespace tdfusion;

namespace {

double masked_mean(const Image& im, const std::vector<bool>& mask) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      s += im.pixels[i];
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

/// Smallest 3x3 sample variance among the windows that contain (i, j).
double min_window_variance(const Image& im, std::size_t i, std::size_t j) {
  double best = 1e9;
  for (std::ptrdiff_t ci = static_cast<std::ptrdiff_t>(i) - 1; ci <= static_cast<std::ptrdiff_t>(i) + 1; ++ci) {
    for (std::ptrdiff_t cj = static_cast<std::ptrdiff_t>(j) - 1; cj <= static_cast<std::ptrdiff_t>(j) + 1; ++cj) {
      if (ci < 1 || cj < 1 || ci + 1 >= static_cast<std::ptrdiff_t>(im.height) ||
          cj + 1 >= static_cast<std::ptrdiff_t>(im.width)) {
        continue;
      }
      double s = 0.0, s2 = 0.0;
      for (std::ptrdiff_t di = -1; di <= 1; ++di) {
        for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
          const double v = im.at(static_cast<std::size_t>(ci + di), static_cast<std::size_t>(cj + dj));
          s += v;
          s2 += v * v;
        }
      }
      best = std::min(best, s2 / 9.0 - (s / 9.0) * (s / 9.0));
    }
  }
  return best;
}

struct Confusion {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  void add(bool truth, bool predicted) {
    if (truth) {
      predicted ? ++tp : ++fn;
    } else {
      predicted ? ++fp : ++tn;
    }
  }
  double accuracy() const { return static_cast<double>(tp + tn) / static_cast<double>(tp + tn + fp + fn); }
  double balanced() const {
    return 0.5 * (static_cast<double>(tp) / static_cast<double>(tp + fn) +
                  static_cast<double>(tn) / static_cast<double>(tn + fp));
  }
};

}  // namespace

TEST(GenPair, DeterministicPerSeed) {
  std::mt19937_64 r1(17), r2(17);
  const ImagePair p = gen_pair(SceneSpec{}, r1), q = gen_pair(SceneSpec{}, r2);
  EXPECT_EQ(p.a.pixels, q.a.pixels);
  EXPECT_EQ(p.b.pixels, q.b.pixels);
  EXPECT_EQ(p.labels, q.labels);
}

TEST(GenPair, PixelsStayInUnitRange) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 10; ++k) {
    const ImagePair p = gen_pair(SceneSpec{}, rng);
    for (const Image* im : {&p.a, &p.b}) {
      EXPECT_GE(*std::min_element(im->pixels.begin(), im->pixels.end()), 0.0);
      EXPECT_LE(*std::max_element(im->pixels.begin(), im->pixels.end()), 1.0);
    }
  }
}

TEST(GenPair, TargetsStandOutOnlyInModalityA) {
  const SceneSpec spec;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const ImagePair p = gen_pair(spec, rng);
    const auto target = p.mask(PixelClass::Target), background = p.mask(PixelClass::Background);
    EXPECT_GE(masked_mean(p.a, target) - masked_mean(p.a, background), 0.3) << "seed " << seed;
    EXPECT_LE(std::abs(masked_mean(p.b, target) - masked_mean(p.b, background)), 2 * spec.noise) << "seed " << seed;
  }
}

TEST(GenPair, IdenticalModalitiesCopyA) {
  SceneSpec spec;
  spec.identical_modalities = true;
  std::mt19937_64 rng(4);
  const ImagePair p = gen_pair(spec, rng);
  EXPECT_EQ(p.a.pixels, p.b.pixels);
}

TEST(GenPair, InvalidSpecsAreRejected) {
  std::mt19937_64 rng(0);
  SceneSpec weak;
  weak.a_target = 0.3;
  EXPECT_THROW(gen_pair(weak, rng), std::invalid_argument);
  SceneSpec odd;
  odd.stripe_period = 3;
  EXPECT_THROW(gen_pair(odd, rng), std::invalid_argument);
  SceneSpec tiny;
  tiny.height = tiny.width = 12;
  EXPECT_THROW(gen_pair(tiny, rng), std::invalid_argument);
}

TEST(GenDataset, CountAndDistinctLabelMaps) {
  const auto data = gen_dataset(SceneSpec{}, 32, 11);
  ASSERT_EQ(data.size(), 32u);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = i + 1; j < data.size(); ++j) EXPECT_NE(data[i].labels, data[j].labels) << i << "," << j;
  }
}

TEST(GenDataset, ItemsReproducibleInIsolation) {
  const auto data = gen_dataset(SceneSpec{}, 8, 99);
  for (std::size_t i : {0u, 5u, 7u}) {
    std::mt19937_64 rng(derive_seed(99, i));
    const ImagePair p = gen_pair(SceneSpec{}, rng);
    EXPECT_EQ(p.a.pixels, data[i].a.pixels);
    EXPECT_EQ(p.labels, data[i].labels);
  }
}

TEST(GenDataset, TooSmallIsRejected) { EXPECT_THROW(gen_dataset(SceneSpec{}, 3, 0), std::invalid_argument); }

TEST(GenDataset, ClassFrequenciesAreBalancedEnough) {
  const auto data = gen_dataset(SceneSpec{}, 64, 5);
  std::array<double, kClassCount> freq{};
  std::size_t total = 0;
  for (const ImagePair& p : data) {
    for (int l : p.labels) freq[static_cast<std::size_t>(l)] += 1.0;
    total += p.labels.size();
  }
  for (double f : freq) {
    EXPECT_GE(f / static_cast<double>(total), 0.02);
    EXPECT_LE(f / static_cast<double>(total), 0.60);
  }
}

TEST(GenDataset, EachClassIsSeparableInItsOwnModality) {
  const auto data = gen_dataset(SceneSpec{}, 20, 21);
  Confusion target_a, target_b, texture_b, texture_a;
  for (const ImagePair& p : data) {
    for (std::size_t i = 0; i < p.a.height; ++i) {
      for (std::size_t j = 0; j < p.a.width; ++j) {
        const auto cls = static_cast<PixelClass>(p.labels[i * p.a.width + j]);
        if (cls != PixelClass::Texture) {
          const bool truth = cls == PixelClass::Target;
          target_a.add(truth, p.a.at(i, j) > 0.5);
          target_b.add(truth, p.b.at(i, j) > 0.5);
        }
        if (cls != PixelClass::Target) {
          const bool truth = cls == PixelClass::Texture;
          texture_b.add(truth, min_window_variance(p.b, i, j) > 0.003);
          texture_a.add(truth, min_window_variance(p.a, i, j) > 0.003);
        }
      }
    }
  }
  EXPECT_GE(target_a.accuracy(), 0.99);
  EXPECT_LE(target_b.balanced(), 0.60);
  EXPECT_GE(texture_b.accuracy(), 0.99);
  EXPECT_LE(texture_a.balanced(), 0.60);
}

TEST(DeriveSeed, DistinctIndicesGiveDistinctSeeds) {
  EXPECT_NE(derive_seed(0, 0), derive_seed(0, 1));
  EXPECT_NE(derive_seed(0, 1), derive_seed(1, 0));
  EXPECT_EQ(derive_seed(42, 3), derive_seed(42, 3));
}
