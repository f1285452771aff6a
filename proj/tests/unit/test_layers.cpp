#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "generators.hpp"
#include "oracles.hpp"
#include "spi/errors.hpp"
#include "spi/grad_check.hpp"
#include "spi/layers.hpp"

using spi::BasicTensor;
using spi::LayerParams;
using spi::Shape;
using spi::TensorD;

namespace {

LayerParams<double> random_params(gen::Gen& g, std::size_t out, std::size_t in, std::size_t k) {
  LayerParams<double> p("conv", out, in, k);
  p.weights = g.tensor<double>(p.weights.shape());
  p.bias = g.tensor<double>(p.bias.shape());
  return p;
}

std::vector<double> to_vec(const TensorD& t) { return {t.values().begin(), t.values().end()}; }

oracle::Dims dims(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

double weighted_sum(const TensorD& y, const TensorD& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
  return s;
}

}  // namespace

TEST(Conv2d, IdentityKernelReproducesInput) {
  gen::Gen g(3);
  const TensorD x = g.tensor<double>(Shape{2, 3, 5, 4});
  LayerParams<double> p("id", 3, 3, 1);
  for (std::size_t o = 0; o < 3; ++o) p.weights.at(o, o, 0, 0) = 1.0;
  EXPECT_EQ(spi::conv2d(x, p, 1, 0), x);
}

TEST(Conv2d, AllOnesKernelCountsTaps) {
  const TensorD x(Shape{1, 1, 5, 5}, 7.0);
  LayerParams<double> p("ones", 1, 1, 3);
  p.weights.fill(1.0);
  const TensorD y = spi::conv2d(x, p, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  EXPECT_DOUBLE_EQ(y.at(0, 0, 2, 2), 63.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 28.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 4, 4), 28.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 2), 42.0);
}

TEST(Conv2d, OutputShapeFollowsStrideAndPad) {
  gen::Gen g(5);
  const TensorD x = g.tensor<double>(Shape{2, 2, 9, 7});
  const auto p = random_params(g, 3, 2, 3);
  EXPECT_EQ(spi::conv2d(x, p, 2, 1).shape(), (Shape{2, 3, 5, 4}));
  EXPECT_EQ(spi::conv2d(x, p, 1, 0).shape(), (Shape{2, 3, 7, 5}));
}

TEST(Conv2d, MatchesNaiveLoopOracle) {
  gen::for_all(20, 11, [](gen::Gen& g) {
    const TensorD x = g.tensor<double>(Shape{1, 2, 8, 8});
    const auto p = random_params(g, 4, 2, 3);
    const std::size_t stride = g.size(1, 2), pad = g.size(0, 1);
    oracle::Dims yd{};
    const auto expected = oracle::conv2d(to_vec(x), dims(x.shape()), to_vec(p.weights), 4, 3, to_vec(p.bias),
                                         stride, pad, yd);
    const TensorD y = spi::conv2d(x, p, stride, pad);
    ASSERT_EQ(y.shape(), (Shape{yd.n, yd.c, yd.h, yd.w}));
    EXPECT_LE(oracle::max_relative_error(to_vec(y), expected), 1e-5);
  });
}

TEST(Conv2d, FloatMatchesOracle) {
  gen::Gen g(17);
  const TensorD x = g.tensor<double>(Shape{2, 3, 12, 10});
  const auto p = random_params(g, 5, 3, 3);
  oracle::Dims yd{};
  const auto expected = oracle::conv2d(to_vec(x), dims(x.shape()), to_vec(p.weights), 5, 3, to_vec(p.bias), 1, 1, yd);
  const auto y = spi::conv2d(x.cast<float>(), p.cast<float>(), 1, 1);
  double worst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    worst = std::max(worst, std::abs(y[i] - expected[i]) / std::max(1.0, std::abs(expected[i])));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  const TensorD x(Shape{1, 3, 4, 4});
  LayerParams<double> p("stage0", 2, 2, 3);
  try {
    (void)spi::conv2d(x, p, 1, 1);
    FAIL() << "expected ShapeError";
  } catch (const spi::ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("(1,3,4,4)"), std::string::npos) << what;
    EXPECT_NE(what.find("(2,2,3,3)"), std::string::npos) << what;
  }
}

TEST(Conv2d, EmptyOutputIsConfigError) {
  const TensorD x(Shape{1, 1, 2, 2});
  LayerParams<double> p("big", 1, 1, 5);
  EXPECT_THROW((void)spi::conv2d(x, p, 1, 0), spi::ConfigError);
}

TEST(Conv2d, IsLinearInInput) {
  gen::for_all(10, 23, [](gen::Gen& g) {
    const TensorD x = g.tensor<double>(Shape{1, 2, 6, 6});
    const TensorD y = g.tensor<double>(Shape{1, 2, 6, 6});
    auto p = random_params(g, 3, 2, 3);
    p.bias.fill(0.0);
    const double a = g.real(-2, 2), b = g.real(-2, 2);
    TensorD combo(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) combo[i] = a * x[i] + b * y[i];
    const TensorD lhs = spi::conv2d(combo, p, 1, 1);
    const TensorD cx = spi::conv2d(x, p, 1, 1), cy = spi::conv2d(y, p, 1, 1);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      EXPECT_LE(std::abs(lhs[i] - (a * cx[i] + b * cy[i])), 1e-5 * std::max(1.0, std::abs(lhs[i])));
    }
  });
}

TEST(Conv2d, InteriorTranslationEquivariance) {
  gen::Gen g(29);
  const std::size_t stride = 2;
  TensorD x(Shape{1, 1, 12, 12});
  for (std::size_t r = 2; r < 8; ++r)
    for (std::size_t c = 2; c < 8; ++c) x.at(0, 0, r, c) = g.real(-1, 1);
  TensorD shifted(x.shape());
  for (std::size_t r = 0; r + stride < 12; ++r)
    for (std::size_t c = 0; c + stride < 12; ++c) shifted.at(0, 0, r + stride, c + stride) = x.at(0, 0, r, c);
  const auto p = random_params(g, 2, 1, 3);
  const TensorD a = spi::conv2d(x, p, stride, 1), b = spi::conv2d(shifted, p, stride, 1);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t r = 0; r + 1 < a.shape().h; ++r)
      for (std::size_t c = 0; c + 1 < a.shape().w; ++c) EXPECT_NEAR(b.at(0, o, r + 1, c + 1), a.at(0, o, r, c), 1e-12);
}

TEST(Conv2dBackward, ZeroOutputGradGivesZeroGradients) {
  gen::Gen g(31);
  const TensorD x = g.tensor<double>(Shape{2, 2, 5, 5});
  auto p = random_params(g, 3, 2, 3);
  const TensorD gy(Shape{2, 3, 5, 5});
  const TensorD gx = spi::conv2d_backward(x, p, gy, 1, 1);
  EXPECT_EQ(gx, TensorD(x.shape()));
  EXPECT_EQ(p.weight_grad, TensorD(p.weights.shape()));
  EXPECT_EQ(p.bias_grad, TensorD(p.bias.shape()));
}

TEST(Conv2dBackward, IdentityKernelPassesGradientThrough) {
  gen::Gen g(37);
  const TensorD x = g.tensor<double>(Shape{1, 2, 4, 3});
  LayerParams<double> p("id", 2, 2, 1);
  p.weights.at(0, 0, 0, 0) = 1.0;
  p.weights.at(1, 1, 0, 0) = 1.0;
  const TensorD gy = g.tensor<double>(Shape{1, 2, 4, 3});
  EXPECT_EQ(spi::conv2d_backward(x, p, gy, 1, 0), gy);
}

TEST(Conv2dBackward, GradientsAccumulate) {
  gen::Gen g(41);
  const TensorD x = g.tensor<double>(Shape{1, 1, 4, 4});
  auto p = random_params(g, 1, 1, 3);
  const TensorD gy = g.tensor<double>(Shape{1, 1, 4, 4});
  (void)spi::conv2d_backward(x, p, gy, 1, 1);
  const TensorD once = p.weight_grad;
  (void)spi::conv2d_backward(x, p, gy, 1, 1);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(p.weight_grad[i], 2.0 * once[i], 1e-12);
}

TEST(Conv2dBackward, WrongOutputGradShapeIsConfigError) {
  const TensorD x(Shape{1, 1, 4, 4});
  LayerParams<double> p("c", 1, 1, 3);
  EXPECT_THROW((void)spi::conv2d_backward(x, p, TensorD(Shape{1, 1, 3, 3}), 1, 1), spi::ConfigError);
}

TEST(Conv2dBackward, PassesGradCheckOverSeeds) {
  gen::for_all(20, 43, [](gen::Gen& g) {
    const std::size_t stride = g.size(1, 2), pad = g.size(0, 1);
    TensorD x = g.tensor<double>(Shape{g.size(1, 2), 2, g.size(4, 7), g.size(4, 7)});
    auto p = random_params(g, 3, 2, 3);
    const TensorD y0 = spi::conv2d(x, p, stride, pad);
    const TensorD c = g.tensor<double>(y0.shape());
    p.zero_grad();
    const TensorD gx = spi::conv2d_backward(x, p, c, stride, pad);
    const auto loss = [&] { return weighted_sum(spi::conv2d(x, p, stride, pad), c); };
    const spi::GradGroup groups[] = {
        {"input", x.values(), gx.values()},
        {"weights", p.weights.values(), p.weight_grad.values()},
        {"bias", p.bias.values(), p.bias_grad.values()},
    };
    const auto report = spi::grad_check(loss, groups);
    EXPECT_LE(report.worst(), 1e-4);
  });
}

TEST(MaxPool, SingleWindowPicksMaximum) {
  const TensorD x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto r = spi::maxpool2d(x);
  ASSERT_EQ(r.output.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(r.output[0], 4.0);
  EXPECT_EQ(r.argmax[0], 3u);
}

TEST(MaxPool, ConstantInputRoutesGradientToFirstElement) {
  const TensorD x(Shape{1, 1, 4, 4}, 2.5);
  const auto r = spi::maxpool2d(x);
  for (double v : r.output.values()) EXPECT_EQ(v, 2.5);
  const TensorD gy(r.output.shape(), 1.0);
  const TensorD gx = spi::maxpool2d_backward(r, gy);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(gx.at(0, 0, i, j), (i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0);
}

TEST(MaxPool, MatchesWindowScanOracle) {
  gen::for_all(20, 47, [](gen::Gen& g) {
    const TensorD x = g.tensor<double>(Shape{2, 2, g.size(5, 6), g.size(5, 6)});
    oracle::Dims yd{};
    const auto expected = oracle::maxpool(to_vec(x), dims(x.shape()), yd);
    const auto r = spi::maxpool2d(x);
    ASSERT_EQ(r.output.shape(), (Shape{yd.n, yd.c, yd.h, yd.w}));
    EXPECT_EQ(to_vec(r.output), expected);
  });
}

TEST(MaxPool, BackwardConservesGradientMass) {
  gen::for_all(10, 53, [](gen::Gen& g) {
    const TensorD x = g.tensor<double>(Shape{1, 3, 7, 6});
    const auto r = spi::maxpool2d(x);
    const TensorD gy = g.tensor<double>(r.output.shape());
    const TensorD gx = spi::maxpool2d_backward(r, gy);
    double in = 0.0, out = 0.0;
    for (double v : gx.values()) in += v;
    for (double v : gy.values()) out += v;
    EXPECT_NEAR(in, out, 1e-12);
    EXPECT_EQ(gx.shape(), x.shape());
  });
}

TEST(MaxPool, PassesGradCheckAwayFromTies) {
  gen::for_all(20, 59, [](gen::Gen& g) {
    // Distinct, well-separated values keep every window's argmax stable
    // under the finite-difference perturbation.
    TensorD x(Shape{1, 2, g.size(4, 7), g.size(4, 7)});
    std::vector<double> levels(x.size());
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = 0.01 * static_cast<double>(i);
    std::shuffle(levels.begin(), levels.end(), g.rng());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = levels[i];
    const auto r = spi::maxpool2d(x);
    const TensorD c = g.tensor<double>(r.output.shape());
    const TensorD gx = spi::maxpool2d_backward(r, c);
    const auto loss = [&] { return weighted_sum(spi::maxpool2d(x).output, c); };
    const spi::GradGroup groups[] = {{"input", x.values(), gx.values()}};
    EXPECT_LE(spi::grad_check(loss, groups).worst(), 1e-4);
  });
}

TEST(LeakyRelu, Values) {
  const TensorD x(Shape{1, 1, 1, 3}, std::vector<double>{-10.0, 0.0, 2.0});
  const TensorD y = spi::leaky_relu(x);
  EXPECT_DOUBLE_EQ(y[0], -1.0);
  EXPECT_DOUBLE_EQ(y[1], 0.0);
  EXPECT_DOUBLE_EQ(y[2], 2.0);
}

TEST(LeakyRelu, PassesGradCheckAwayFromKink) {
  gen::for_all(20, 61, [](gen::Gen& g) {
    TensorD x = g.tensor<double>(Shape{1, 2, 5, 5});
    for (double& v : x.values()) {
      while (std::abs(v) < 0.01) v = g.real(-1, 1);
    }
    const TensorD c = g.tensor<double>(x.shape());
    const TensorD gx = spi::leaky_relu_backward(x, c);
    const auto loss = [&] { return weighted_sum(spi::leaky_relu(x), c); };
    const spi::GradGroup groups[] = {{"input", x.values(), gx.values()}};
    EXPECT_LE(spi::grad_check(loss, groups).worst(), 1e-4);
  });
}

TEST(Sigmoid, CentreAndSaturation) {
  EXPECT_DOUBLE_EQ(spi::sigmoid(0.0), 0.5);
  EXPECT_DOUBLE_EQ(spi::sigmoid(1000.0), 1.0);
  EXPECT_EQ(spi::sigmoid(-1000.0), 0.0);
  const double s = spi::sigmoid(1000.0);
  EXPECT_EQ(s * (1.0 - s), 0.0);
  EXPECT_TRUE(std::isfinite(spi::sigmoid(-1e308)));
  EXPECT_FLOAT_EQ(spi::sigmoid(40.0f), 1.0f);
}

TEST(Sigmoid, MatchesDefinitionInModerateRange) {
  for (double x = -30.0; x <= 30.0; x += 0.37) EXPECT_NEAR(spi::sigmoid(x), 1.0 / (1.0 + std::exp(-x)), 1e-15);
  const TensorD t(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 2.0});
  const TensorD s = spi::sigmoid(t);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_NEAR(s[1], 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(LayerParams, BufferShapesMirrorParameters) {
  const LayerParams<float> p("x", 4, 3, 3);
  EXPECT_EQ(p.weight_grad.shape(), p.weights.shape());
  EXPECT_EQ(p.weight_velocity.shape(), p.weights.shape());
  EXPECT_EQ(p.bias_grad.shape(), p.bias.shape());
  EXPECT_EQ(p.bias_velocity.shape(), p.bias.shape());
  EXPECT_EQ(p.weights.shape(), (Shape{4, 3, 3, 3}));
  EXPECT_EQ(p.bias.shape(), (Shape{4, 1, 1, 1}));
}
