#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dmm/layers.hpp"
#include "dmm/tensor.hpp"
#include "testing.hpp"

using namespace dmm;
using dmm::testing::check_gradient;
using dmm::testing::random_tensor;
using dmm::testing::separated_tensor;

namespace {

// Loss = <r, layer(x)>; fills the layer's gradients and returns the input gradient.
Tensor backprop_projection(Layer& layer, const Tensor& x, const Tensor& r) {
  layer.params().zero_grad();
  return layer.backward(x, r);
}

double max_layer_error(Layer& layer, Tensor& x, const Tensor& r) {
  const Tensor gx = backprop_projection(layer, x, r);
  auto loss = [&] { return dmm::testing::dot(r, layer.forward(x)); };
  double worst = check_gradient(x.data(), gx.data(), loss);
  if (layer.params().has_parameters()) {
    LayerParams& p = layer.params();
    const Tensor gw = p.weight_grad, gb = p.bias_grad;
    worst = std::max(worst, check_gradient(p.weights.data(), gw.data(), loss));
    worst = std::max(worst, check_gradient(p.bias.data(), gb.data(), loss));
  }
  return worst;
}

}  // namespace

TEST(Tensor, ShapeAndSizeAgree) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
  EXPECT_EQ(t.reshaped({24}).size(), 24u);
}

TEST(Tensor, AddRejectsMismatchedShapes) {
  Tensor a({2, 2}, 1.0), b({4}, 1.0);
  EXPECT_THROW(a.add(b), ShapeError);
  a.add(Tensor({2, 2}, 2.0));
  EXPECT_EQ(sum(a), 12.0);
}

TEST(Layers, DenseForwardSumsWeights) {
  Layer fc(FullyConnected{2, 1});
  fc.params().weights = Tensor({1, 2}, {1.0, 1.0});
  const Tensor y = fc.forward(Tensor::vector({3.0, 4.0}));
  ASSERT_EQ(y.shape(), Shape{1});
  EXPECT_EQ(y[0], 7.0);
}

TEST(Layers, ReluForwardClampsNegatives) {
  Layer relu(Relu{});
  EXPECT_EQ(relu.forward(Tensor::vector({-1.0, 0.0, 2.0})), Tensor::vector({0.0, 0.0, 2.0}));
}

TEST(Layers, ConvOnesKernelSumsWindow) {
  Layer conv(Conv2d{1, 1, 3, 1, 0});
  conv.params().weights.fill(1.0);
  const Tensor y = conv.forward(Tensor({1, 3, 3}, 1.0));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 9.0);
}

TEST(Layers, ReluBackwardZeroesNegativeInputs) {
  Layer relu(Relu{});
  EXPECT_EQ(relu.backward(Tensor::vector({-1.0, 2.0}), Tensor::vector({1.0, 1.0})), Tensor::vector({0.0, 1.0}));
}

TEST(Layers, ShapeErrorsNameLayerAndShapes) {
  Layer fc(FullyConnected{3, 2}, "head.fc1");
  try {
    fc.forward(Tensor({4}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("head.fc1"), std::string::npos) << what;
    EXPECT_NE(what.find("[4]"), std::string::npos) << what;
    EXPECT_NE(what.find("[3]"), std::string::npos) << what;
  }
  EXPECT_THROW(fc.backward(Tensor({3}), Tensor({3})), ShapeError);
  Layer conv(Conv2d{2, 1, 3});
  EXPECT_THROW(conv.forward(Tensor({1, 5, 5})), ShapeError);
  EXPECT_THROW(conv.forward(Tensor({2, 2, 2})), ShapeError);
}

TEST(Layers, DenseGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  Layer fc(FullyConnected{3, 4});
  fc.initialize(rng);
  fc.params().bias = random_tensor({4}, rng);
  Tensor x = random_tensor({3}, rng);
  const Tensor r = random_tensor({4}, rng);
  EXPECT_LT(max_layer_error(fc, x, r), 1e-6);
}

TEST(Layers, GradientChecksAcrossRandomInstances) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> small(1, 3), side(3, 7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = small(rng), c = small(rng), h = side(rng), w = side(rng);
    {
      const std::size_t k = std::min({std::size_t{3}, h, w});
      Layer conv(Conv2d{c, small(rng), k, small(rng) % 2 + 1, trial % 2});
      conv.initialize(rng);
      conv.params().bias = random_tensor(conv.params().bias.shape(), rng);
      Tensor x = random_tensor({n, c, h, w}, rng);
      const Tensor r = random_tensor(conv.output_shape(x.shape()), rng);
      EXPECT_LT(max_layer_error(conv, x, r), 1e-4) << "conv trial " << trial;
    }
    {
      Layer pool(MaxPool2d{2, trial % 2 + 1});
      Tensor x = separated_tensor({n, c, h, w}, rng);
      const Tensor r = random_tensor(pool.output_shape(x.shape()), rng);
      EXPECT_LT(max_layer_error(pool, x, r), 1e-4) << "pool trial " << trial;
    }
    {
      Layer relu(Relu{});
      Tensor x = separated_tensor({n, c * h * w}, rng);
      const Tensor r = random_tensor(x.shape(), rng);
      EXPECT_LT(max_layer_error(relu, x, r), 1e-4) << "relu trial " << trial;
    }
    {
      Layer fc(FullyConnected{h, w});
      fc.initialize(rng);
      Tensor x = random_tensor({n, h}, rng);
      const Tensor r = random_tensor({n, w}, rng);
      EXPECT_LT(max_layer_error(fc, x, r), 1e-6) << "fc trial " << trial;
    }
  }
}

TEST(Layers, MaxPoolBackwardConservesMass) {
  std::mt19937_64 rng(5);
  Layer pool(MaxPool2d{2, 2});
  // Integer upstream values make every partial sum exact.
  Tensor x = random_tensor({2, 3, 6, 6}, rng);
  Tensor r(pool.output_shape(x.shape()));
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<double>(static_cast<int>(i % 7) - 3);
  EXPECT_EQ(sum(pool.backward(x, r)), sum(r));
}

TEST(Layers, MaxPoolTiesRouteToFirstIndex) {
  Layer pool(MaxPool2d{2, 2});
  const Tensor g = pool.backward(Tensor({1, 2, 2}, 1.0), Tensor({1, 1, 1}, 3.0));
  EXPECT_EQ(g, Tensor({1, 2, 2}, {3.0, 0.0, 0.0, 0.0}));
}

TEST(Layers, BackwardAccumulatesParameterGradients) {
  std::mt19937_64 rng(9);
  Layer fc(FullyConnected{4, 2});
  fc.initialize(rng);
  const Tensor x = random_tensor({3, 4}, rng), r = random_tensor({3, 2}, rng);
  fc.backward(x, r);
  const Tensor once = fc.params().weight_grad;
  fc.backward(x, r);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(fc.params().weight_grad[i], 2.0 * once[i]);
}

TEST(Layers, ForwardIsDeterministic) {
  std::mt19937_64 rng(3);
  Layer conv(Conv2d{2, 3, 3, 1, 1});
  conv.initialize(rng);
  const Tensor x = random_tensor({2, 2, 5, 5}, rng);
  EXPECT_EQ(conv.forward(x), conv.forward(x));
}

TEST(Layers, GlorotInitBoundsAndZeroBias) {
  std::mt19937_64 rng(1);
  Layer fc(FullyConnected{10, 6});
  fc.initialize(rng);
  const double a = std::sqrt(6.0 / 16.0);
  for (double w : fc.params().weights.values()) EXPECT_LE(std::abs(w), a);
  EXPECT_EQ(sum(fc.params().bias), 0.0);
}

TEST(Sgd, StepMovesAgainstGradientAndClears) {
  LayerParams p;
  p.weights = Tensor::vector({1.0});
  p.weight_grad = Tensor::vector({2.0});
  p.bias = Tensor::vector({0.0});
  p.bias_grad = Tensor::vector({0.0});
  sgd_step(p, {0.5, 0.0});
  EXPECT_EQ(p.weights[0], 0.0);
  EXPECT_EQ(p.weight_grad[0], 0.0);
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  std::mt19937_64 rng(4);
  Layer fc(FullyConnected{3, 3});
  fc.initialize(rng);
  const Tensor before = fc.params().weights;
  fc.backward(random_tensor({3}, rng), random_tensor({3}, rng));
  sgd_step(fc.params(), {0.0, 0.0});
  EXPECT_EQ(fc.params().weights, before);
}

TEST(Sgd, TwoAccumulatedPassesEqualSummedGradient) {
  std::mt19937_64 rng(6);
  Layer a(FullyConnected{4, 3});
  a.initialize(rng);
  Layer b = a;
  const Tensor x1 = random_tensor({4}, rng), x2 = random_tensor({4}, rng);
  const Tensor r1 = random_tensor({3}, rng), r2 = random_tensor({3}, rng);
  a.backward(x1, r1);
  a.backward(x2, r2);
  sgd_step(a.params(), {0.1, 0.0});

  // Oracle: gradients computed separately, summed by hand, applied manually.
  Layer g1 = b, g2 = b;
  g1.backward(x1, r1);
  g2.backward(x2, r2);
  for (std::size_t i = 0; i < b.params().weights.size(); ++i) {
    const double g = g1.params().weight_grad[i] + g2.params().weight_grad[i];
    EXPECT_DOUBLE_EQ(a.params().weights[i], b.params().weights[i] - 0.1 * g);
  }
}

TEST(Sgd, MomentumKeepsVelocity) {
  LayerParams p;
  p.weights = Tensor::vector({0.0});
  p.bias = Tensor::vector({0.0});
  p.weight_grad = Tensor::vector({1.0});
  p.bias_grad = Tensor::vector({0.0});
  sgd_step(p, {1.0, 0.5});
  EXPECT_EQ(p.weights[0], -1.0);
  p.weight_grad[0] = 1.0;
  sgd_step(p, {1.0, 0.5});
  EXPECT_EQ(p.weights[0], -2.5);
}
