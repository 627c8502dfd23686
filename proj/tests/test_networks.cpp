#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/numeric.hpp"
#include "tdfusion/loss.hpp"
#include "tdfusion/networks.hpp"

using namespace tdfusion;
using namespace tdfusion::autodiff;
using testsupport::random_tensor;
using testsupport::rel_error;
using testsupport::values;

namespace {

Tensor random_images(std::size_t n, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return random_tensor({n, 1, h, w}, rng, 0.0, 1.0);
}

/// Central differences of f over every scalar of a ParamSet.
std::vector<double> numeric_param_gradient(const ParamSet& p, const std::function<double(const ParamSet&)>& f,
                                           double eps = 1e-6) {
  std::vector<double> flat = p.flatten();
  std::vector<double> g(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + eps;
    const double up = f(p.unflatten(flat));
    flat[i] = keep - eps;
    const double down = f(p.unflatten(flat));
    flat[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

std::vector<double> ad_param_gradient(const ParamSet& p, const std::function<Tensor(const ParamSet&)>& f) {
  Tape tape;
  const ParamSet w = p.watched(tape);
  std::vector<double> out;
  for (const Tensor& g : grad(f(w), w, false)) {
    const auto v = values(g);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace

TEST(InitParams, DeterministicPerSeed) {
  const NetSpec spec = NetSpec::fusion();
  EXPECT_TRUE(init_params(spec, 5).bitwise_equal(init_params(spec, 5)));
  EXPECT_FALSE(init_params(spec, 5).bitwise_equal(init_params(spec, 6)));
}

TEST(InitParams, LossGenHeadStartsAtZero) {
  const NetSpec spec = NetSpec::lossgen();
  const ParamSet p = init_params(spec, 1);
  const std::size_t head = spec.layer_count() - 1;
  for (double v : p.at(layer_weight_name(head)).data()) EXPECT_EQ(v, 0.0);
  for (double v : p.at(layer_bias_name(head)).data()) EXPECT_EQ(v, 0.0);
  bool hidden_nonzero = false;
  for (double v : p.at(layer_weight_name(0)).data()) hidden_nonzero |= v != 0.0;
  EXPECT_TRUE(hidden_nonzero);
}

TEST(InitParams, ParameterCountMatchesSpec) {
  for (const NetSpec& spec : {NetSpec::fusion(), NetSpec::task(), NetSpec::lossgen()}) {
    EXPECT_EQ(init_params(spec, 0).parameter_count(), spec.parameter_count());
  }
  // 2->16->16->16->1 with 3x3 kernels and biases
  EXPECT_EQ(NetSpec::fusion().parameter_count(), (2 * 16 * 9 + 16) + 2 * (16 * 16 * 9 + 16) + (16 * 9 + 1));
}

TEST(InitParams, InvalidSpecsAreRejected) {
  NetSpec bad = NetSpec::fusion();
  bad.out_channels = 2;
  EXPECT_THROW(init_params(bad, 0), std::invalid_argument);
  NetSpec even = NetSpec::make(NetworkKind::Task, {4}, 2);
  EXPECT_THROW(init_params(even, 0), std::invalid_argument);
}

TEST(Fuse, ShapeAndRange) {
  std::mt19937_64 rng(2);
  const ParamSet f = init_params(NetSpec::fusion(), 3);
  const Tensor a = random_images(2, 32, 32, rng), b = random_images(2, 32, 32, rng);
  const Tensor y = fuse(a, b, f);
  EXPECT_EQ(y.shape(), a.shape());
  for (double v : y.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Fuse, RejectsMismatchedSources) {
  const ParamSet f = init_params(NetSpec::fusion(), 3);
  EXPECT_THROW(fuse(Tensor::zeros({1, 1, 8, 8}), Tensor::zeros({1, 1, 8, 9}), f), ShapeError);
  EXPECT_THROW(fuse(Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 8, 8}), f), ShapeError);
}

TEST(Fuse, ParameterGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const ParamSet f = init_params(NetSpec::make(NetworkKind::Fusion, {6, 6}, 3), 8);
  const Tensor a = random_images(1, 8, 8, rng), b = random_images(1, 8, 8, rng);
  const auto ad = ad_param_gradient(f, [&](const ParamSet& p) { return mean(fuse(a, b, p)); });
  const auto fd = numeric_param_gradient(f, [&](const ParamSet& p) { return mean(fuse(a, b, p)).item(); });
  EXPECT_LE(rel_error(ad, fd), 1e-5);
}

TEST(TaskForward, ChannelCountAndInputGradient) {
  std::mt19937_64 rng(5);
  const ParamSet t = init_params(NetSpec::make(NetworkKind::Task, {6, 6}, 3, 4), 9);
  const Tensor img = random_images(2, 7, 9, rng);
  const Tensor logits = task_forward(img, t);
  EXPECT_EQ(logits.shape(), (Shape{2, 4, 7, 9}));

  const Tensor r = random_tensor(logits.shape(), rng);
  auto objective = [&](const std::vector<Tensor>& x) { return sum(mul(task_forward(x[0], t), r)); };
  Tape tape;
  const Tensor leaf = tape.watch(img);
  const auto ad = values(grad(objective({leaf}), {leaf}, false)[0]);
  const auto fd = testsupport::numeric_gradient([&](const std::vector<Tensor>& x) { return objective(x).item(); },
                                                {img})[0];
  EXPECT_LE(rel_error(ad, fd), 1e-5);
}

TEST(TaskForward, UniformLogitsGiveLogThree) {
  const Tensor logits = Tensor::zeros({1, 3, 4, 4});
  EXPECT_NEAR(task_loss(logits, std::vector<int>(16, 1)).item(), std::log(3.0), 1e-15);
}

TEST(GenWeights, ZeroHeadGivesExactHalves) {
  std::mt19937_64 rng(6);
  const ParamSet g = init_params(NetSpec::lossgen(), 10);
  const FusionWeights w = gen_weights(random_images(2, 16, 16, rng), random_images(2, 16, 16, rng), g);
  for (double v : w.w_a.data()) EXPECT_EQ(v, 0.5);
  for (double v : w.w_b.data()) EXPECT_EQ(v, 0.5);
}

TEST(GenWeights, SimplexOnRandomInputs) {
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParamSet g = init_params(NetSpec::lossgen(), seed, false);
    // scale the head up so the softmax is far from uniform
    std::vector<double> flat = g.flatten();
    for (double& v : flat) v *= 3.0;
    g = g.unflatten(flat);
    const FusionWeights w = gen_weights(random_images(1, 16, 16, rng), random_images(1, 16, 16, rng), g);
    for (std::size_t i = 0; i < w.w_a.numel(); ++i) {
      EXPECT_GE(w.w_a[i], 0.0);
      EXPECT_GE(w.w_b[i], 0.0);
      EXPECT_LE(std::abs(w.w_a[i] + w.w_b[i] - 1.0), 1e-12);
    }
  }
}

TEST(GenWeights, ParameterGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const ParamSet g = init_params(NetSpec::make(NetworkKind::LossGen, {6, 6}, 3), 11, false);
  const Tensor a = random_images(1, 8, 8, rng), b = random_images(1, 8, 8, rng);
  const auto ad = ad_param_gradient(g, [&](const ParamSet& p) { return mean(gen_weights(a, b, p).w_a); });
  const auto fd = numeric_param_gradient(g, [&](const ParamSet& p) { return mean(gen_weights(a, b, p).w_a).item(); });
  EXPECT_LE(rel_error(ad, fd), 1e-5);
}

TEST(Forward, DeterministicMaps) {
  std::mt19937_64 rng(9);
  const Tensor a = random_images(1, 12, 12, rng), b = random_images(1, 12, 12, rng);
  const ParamSet f = init_params(NetSpec::fusion(), 1), t = init_params(NetSpec::task(), 2),
                 g = init_params(NetSpec::lossgen(), 3, false);
  EXPECT_TRUE(fuse(a, b, f).bitwise_equal(fuse(a, b, f)));
  EXPECT_TRUE(task_forward(a, t).bitwise_equal(task_forward(a, t)));
  EXPECT_TRUE(gen_weights(a, b, g).w_a.bitwise_equal(gen_weights(a, b, g).w_a));
}
