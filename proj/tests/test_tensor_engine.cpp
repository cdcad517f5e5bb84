#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "divcot/layers.hpp"
#include "divcot/loss.hpp"
#include "divcot/optim.hpp"
#include "divcot/params.hpp"
#include "test_util.hpp"

using namespace divcot;
using divcot::testing::random_labels;
using divcot::testing::random_tensor;

namespace {

LabelMap single(std::uint8_t y) {
  LabelMap m(1, 1);
  m.data[0] = y;
  return m;
}

// Reference CE for one pixel, written from the definition.
double ce_oracle(const std::vector<double>& logits, int y) {
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  return -std::log(std::exp(logits[static_cast<std::size_t>(y)]) / z);
}

/// Builds a ParamSet with one conv layer and returns the layer.
Conv3x3 make_conv(ParamSet& ps, std::size_t in, std::size_t out, std::size_t stride, std::uint64_t seed) {
  Conv3x3 l{in, out, stride, 0, 0};
  l.weight = ps.add("w", random_tensor({out, in * 9}, seed));
  l.bias = ps.add("b", random_tensor({out}, seed + 1));
  return l;
}

/// Checks input and parameter gradients of `layer` against central differences
/// of L = sum(upstream * layer(x)).
double layer_grad_error(const Layer& layer, ParamSet& ps, Tensor x, std::uint64_t seed) {
  LayerCache cache;
  const Tensor y = layer_forward(layer, x, ps, cache);
  const Tensor up = random_tensor(y.shape(), seed);
  GradBuffer g = ps.make_grad_buffer();
  const Tensor gx = layer_backward(layer, up, cache, ps, g);
  auto loss = [&]() {
    const Tensor out = layer_forward(layer, x, ps);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * up[i];
    return s;
  };
  const double eps = 1e-6;
  double worst = 0.0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double a = loss();
    x[i] = saved - eps;
    const double b = loss();
    x[i] = saved;
    worst = std::max(worst, rel(gx[i], (a - b) / (2 * eps)));
  }
  for (std::size_t p = 0; p < ps.size(); ++p)
    for (std::size_t i = 0; i < ps.value(p).size(); ++i) {
      double& v = ps.value(p)[i];
      const double saved = v;
      v = saved + eps;
      const double a = loss();
      v = saved - eps;
      const double b = loss();
      v = saved;
      worst = std::max(worst, rel(g[p][i], (a - b) / (2 * eps)));
    }
  return worst;
}

}  // namespace

TEST(Layers, ReluClampsNegatives) {
  ParamSet ps;
  const Tensor x({1, 3, 1, 1}, std::vector<double>{-1.0, 0.0, 2.0});
  const Tensor y = layer_forward(Relu{}, x, ps);
  EXPECT_EQ(y.storage(), (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(Layers, NearestUpsampleRepeatsBlocks) {
  ParamSet ps;
  const Tensor x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor y = layer_forward(Upsample{2}, x, ps);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  const std::vector<double> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(y.storage(), expected);
}

TEST(Layers, IdentityConvKernelPreservesInput) {
  ParamSet ps;
  Conv3x3 conv{2, 2, 1, 0, 0};
  Tensor w({2, 18}, 0.0);
  w.at(0, 0 * 9 + 4) = 1.0;  // out0 <- in0 centre tap
  w.at(1, 1 * 9 + 4) = 1.0;  // out1 <- in1 centre tap
  conv.weight = ps.add("w", w);
  conv.bias = ps.add("b", Tensor({2}, 0.0));
  const Tensor x = random_tensor({2, 2, 5, 7}, 3);
  EXPECT_EQ(layer_forward(conv, x, ps), x);
}

TEST(Layers, ShapeMismatchNamesLayerAndShapes) {
  ParamSet ps;
  const Conv3x3 conv = make_conv(ps, 3, 4, 1, 1);
  try {
    layer_forward(conv, Tensor({1, 5, 4, 4}), ps);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("conv3x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3 input channels"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1x5x4x4]"), std::string::npos) << msg;
  }
}

TEST(Layers, StrideTwoHalvesEvenExtents) {
  ParamSet ps;
  const Conv3x3 conv = make_conv(ps, 3, 4, 2, 1);
  EXPECT_EQ(layer_output_shape(conv, {2, 3, 16, 8}), (Shape{2, 4, 8, 4}));
}

TEST(Layers, SoftmaxRowsAreDistributions) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor logits = random_tensor({2, 5, 3, 3}, seed, -30.0, 30.0);
    const Tensor p = softmax_channels(logits);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 9; ++i) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 5; ++c) {
          const double v = p[(n * 5 + c) * 9 + i];
          EXPECT_GE(v, 0.0);
          sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
  }
}

// Every layer type's backward pass against central differences.
TEST(Layers, BackwardMatchesFiniteDifferences) {
  {
    ParamSet ps;
    const Conv3x3 conv = make_conv(ps, 2, 3, 1, 10);
    EXPECT_LT(layer_grad_error(conv, ps, random_tensor({2, 2, 5, 4}, 11), 12), 1e-6) << "conv stride 1";
  }
  {
    ParamSet ps;
    const Conv3x3 conv = make_conv(ps, 2, 3, 2, 20);
    EXPECT_LT(layer_grad_error(conv, ps, random_tensor({1, 2, 6, 6}, 21), 22), 1e-6) << "conv stride 2";
  }
  {
    ParamSet ps;
    Dense d{3, 4, 0, 0};
    d.weight = ps.add("w", random_tensor({4, 3}, 30));
    d.bias = ps.add("b", random_tensor({4}, 31));
    EXPECT_LT(layer_grad_error(d, ps, random_tensor({2, 3, 2, 3}, 32), 33), 1e-6) << "dense";
  }
  {
    ParamSet ps;
    TokenMix t{6, 0, 0};
    t.weight = ps.add("w", random_tensor({6, 6}, 40));
    t.bias = ps.add("b", random_tensor({6}, 41));
    EXPECT_LT(layer_grad_error(t, ps, random_tensor({2, 3, 2, 3}, 42), 43), 1e-6) << "token mix";
  }
  {
    ParamSet ps;
    GroupNorm gn;
    gn.channels = 8;
    gn.groups = 4;
    gn.gamma = ps.add("g", random_tensor({8}, 50, 0.5, 1.5));
    gn.beta = ps.add("b", random_tensor({8}, 51));
    EXPECT_LT(layer_grad_error(gn, ps, random_tensor({2, 8, 3, 3}, 52), 53), 1e-5) << "groupnorm";
  }
  {
    ParamSet ps;
    EXPECT_LT(layer_grad_error(Relu{}, ps, random_tensor({1, 2, 4, 4}, 60), 61), 1e-6) << "relu";
    EXPECT_LT(layer_grad_error(Upsample{3}, ps, random_tensor({1, 2, 2, 3}, 62), 63), 1e-6) << "upsample";
    EXPECT_LT(layer_grad_error(SpaceToDepth{2}, ps, random_tensor({1, 2, 4, 6}, 64), 65), 1e-6) << "patchify";
    EXPECT_LT(layer_grad_error(SoftmaxChannels{}, ps, random_tensor({2, 4, 2, 2}, 66), 67), 1e-6) << "softmax";
  }
}

TEST(CrossEntropy, UniformTwoClassIsLn2) {
  const Tensor logits({1, 2, 1, 1}, std::vector<double>{0.3, 0.3});
  const LabelMap y = single(0);
  const auto r = pixel_cross_entropy(logits, std::span(&y, 1));
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(r.loss, 0.693147, 1e-6);
}

TEST(CrossEntropy, LargeMarginTendsToZero) {
  const LabelMap y = single(1);
  double prev = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 50.0}) {
    const Tensor logits({1, 2, 1, 1}, std::vector<double>{0.0, margin});
    const double l = pixel_cross_entropy(logits, std::span(&y, 1)).loss;
    EXPECT_LT(l, prev);
    EXPECT_GE(l, 0.0);
    prev = l;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(CrossEntropy, MatchesDirectSoftmaxOracle) {
  const Tensor logits({1, 2, 1, 1}, std::vector<double>{1.0, 2.0});
  const LabelMap y = single(1);
  const auto r = pixel_cross_entropy(logits, std::span(&y, 1));
  EXPECT_NEAR(r.loss, ce_oracle({1.0, 2.0}, 1), 1e-14);
  EXPECT_NEAR(r.loss, 0.313262, 1e-6);
  // gradient = softmax - onehot
  const double p1 = std::exp(1.0) / (std::exp(1.0) + std::exp(2.0));
  EXPECT_NEAR(r.grad[0], p1, 1e-14);
  EXPECT_NEAR(r.grad[1], (1.0 - p1) - 1.0, 1e-14);
}

TEST(CrossEntropy, MaskAndIgnoreAreExcluded) {
  const Tensor logits = random_tensor({1, 3, 2, 2}, 5);
  LabelMap y = random_labels(2, 2, 3, 6);
  y.data[1] = kIgnoreLabel;
  Mask m(2, 2, 1);
  m.data[2] = 0;
  const auto r = pixel_cross_entropy(logits, std::span(&y, 1), std::span(&m, 1));
  EXPECT_EQ(r.valid, 2u);
  double expected = 0.0;
  for (std::size_t i : {0u, 3u}) {
    std::vector<double> l{logits[i], logits[4 + i], logits[8 + i]};
    expected += ce_oracle(l, y.data[i]);
  }
  EXPECT_NEAR(r.loss, expected / 2.0, 1e-13);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(r.grad[c * 4 + 1], 0.0);
    EXPECT_EQ(r.grad[c * 4 + 2], 0.0);
  }
}

TEST(CrossEntropy, NoValidPixelGivesZeroLossAndGradient) {
  const Tensor logits = random_tensor({1, 2, 2, 2}, 7);
  LabelMap y(2, 2, kIgnoreLabel);
  const auto r = pixel_cross_entropy(logits, std::span(&y, 1));
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(CrossEntropy, RejectsBadClassCounts) {
  const LabelMap y = single(0);
  EXPECT_THROW(pixel_cross_entropy(Tensor({1, 1, 1, 1}), std::span(&y, 1)), std::invalid_argument);
  const LabelMap bad = single(2);
  EXPECT_THROW(pixel_cross_entropy(Tensor({1, 2, 1, 1}), std::span(&bad, 1)), std::invalid_argument);
}

TEST(CrossEntropy, NonNegativeOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor logits = random_tensor({2, 4, 3, 3}, seed, -10, 10);
    std::vector<LabelMap> y{random_labels(3, 3, 4, seed + 1000), random_labels(3, 3, 4, seed + 2000)};
    EXPECT_GE(pixel_cross_entropy(logits, y).loss, 0.0);
  }
}

TEST(Sgd, ZeroLearningRateLeavesParameters) {
  ParamSet ps;
  ps.add("a", Tensor({3}, std::vector<double>{1, 2, 3}));
  ps.grad(0).fill(0.7);
  sgd_update(ps, 0.0, 0.9, 0.0);
  EXPECT_EQ(ps.value(0).storage(), (std::vector<double>{1, 2, 3}));
  for (double g : ps.grad(0).values()) EXPECT_EQ(g, 0.0);
}

TEST(Sgd, PlainStepArithmetic) {
  ParamSet ps;
  ps.add("a", Tensor({1}, 1.0));
  ps.grad(0)[0] = 0.5;
  sgd_update(ps, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(ps.value(0)[0], 0.95);
  EXPECT_EQ(ps.step(), 1u);
}

TEST(Sgd, MomentumAndDecayFollowUpdateRule) {
  ParamSet ps;
  ps.add("a", Tensor({1}, 2.0));
  double v = 0.0, p = 2.0;
  for (int i = 0; i < 5; ++i) {
    const double g = 0.1 * (i + 1);
    ps.grad(0)[0] = g;
    sgd_update(ps, 0.05, 0.9, 0.01);
    v = 0.9 * v + g + 0.01 * p;
    p -= 0.05 * v;
    EXPECT_DOUBLE_EQ(ps.value(0)[0], p);
  }
}

TEST(Sgd, IdenticalInputsGiveBitIdenticalResults) {
  auto make = [] {
    ParamSet ps;
    ps.add("w", random_tensor({4, 4}, 1));
    return ps;
  };
  ParamSet a = make(), b = make();
  for (int step = 0; step < 10; ++step) {
    const Tensor g = random_tensor({4, 4}, 100 + static_cast<std::uint64_t>(step));
    a.grad(0) = g;
    b.grad(0) = g;
    sgd_update(a, 0.01, 0.9, 1e-4);
    sgd_update(b, 0.01, 0.9, 1e-4);
  }
  EXPECT_TRUE(a.same_values(b));
}

TEST(Sgd, NonFiniteGradientNamesParameter) {
  ParamSet ps;
  ps.add("ok", Tensor({1}, 0.0));
  ps.add("broken.weight", Tensor({2}, 0.0));
  ps.grad(1)[1] = std::nan("");
  try {
    sgd_update(ps, 0.1, 0.0, 0.0);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.weight"), std::string::npos);
  }
}

TEST(PolyLr, Boundaries) {
  EXPECT_DOUBLE_EQ(poly_lr(0.01, 0, 100, 0.9), 0.01);
  EXPECT_DOUBLE_EQ(poly_lr(0.01, 100, 100, 0.9), 0.0);
}

TEST(PolyLr, HalfwayPower) {
  const double expected = 0.001 * std::pow(0.5, 0.9);
  EXPECT_DOUBLE_EQ(poly_lr(0.001, 50, 100, 0.9), expected);
  EXPECT_NEAR(poly_lr(0.001, 50, 100, 0.9), 0.000536, 5e-7);
}

TEST(PolyLr, IterPastTotalIsAnError) { EXPECT_THROW(poly_lr(0.01, 101, 100, 0.9), std::invalid_argument); }

TEST(ParamSet, RejectsDuplicateNames) {
  ParamSet ps;
  ps.add("x", Tensor({1}));
  EXPECT_THROW(ps.add("x", Tensor({1})), std::invalid_argument);
}

TEST(ParamSet, SerializationRoundTripsExactly) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParamSet ps;
    ps.add("layer.a", random_tensor({3, 4}, seed));
    ps.add("layer.b", random_tensor({2, 1, 3, 2}, seed + 7, -1e300, 1e300));
    std::stringstream buf;
    write_params(buf, ps, "{\"k\":1}");
    const auto back = read_params(buf);
    EXPECT_EQ(back.meta, "{\"k\":1}");
    EXPECT_TRUE(back.params.same_values(ps));
  }
}

TEST(ParamSet, SerializedLayoutIsDocumented) {
  ParamSet ps;
  ps.add("ab", Tensor({2}, std::vector<double>{1.0, -2.0}));
  std::stringstream buf;
  write_params(buf, ps, "");
  const std::string bytes = buf.str();
  // magic 8 + meta_len 8 + count 8 + name_len 8 + "ab" 2 + rank 8 + extent 8 + value_count 8 + 2*8
  ASSERT_EQ(bytes.size(), 8u + 8 + 8 + 8 + 2 + 8 + 8 + 8 + 16);
  EXPECT_EQ(bytes.substr(0, 8), "DCPARAM1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 1u);  // count, little-endian
  EXPECT_EQ(bytes.substr(32, 2), "ab");
}

TEST(Tensor, RejectsInconsistentData) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(check_finite(Tensor({1}, std::nan("")), "x"), NonFiniteError);
}
