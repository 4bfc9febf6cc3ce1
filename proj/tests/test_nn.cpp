#include <gtest/gtest.h>

#include <cmath>

#include "mafaseg/nn.hpp"
#include "test_util.hpp"

using namespace mafaseg;
using namespace mafaseg::nn;
using testutil::random_tensor;

namespace {

// Direct-loop "same" convolution with TF-style padding.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k, int stride, int dil,
                           bool depthwise) {
  const int kh = k.shape().n;
  const int kw = k.shape().h;
  const int cin = x.channels();
  const int cout = depthwise ? cin : k.shape().c;
  const int oh = (x.height() + stride - 1) / stride;
  const int ow = (x.width() + stride - 1) / stride;
  const int ph = std::max((oh - 1) * stride + (kh - 1) * dil + 1 - x.height(), 0) / 2;
  const int pw = std::max((ow - 1) * stride + (kw - 1) * dil + 1 - x.width(), 0) / 2;
  Tensor<double> out(x.batch(), oh, ow, cout);
  auto kat = [&](int a, int b, int ci, int co) {
    return k[((static_cast<std::size_t>(a) * kw + b) * k.shape().w + ci) * k.shape().c + co];
  };
  for (int n = 0; n < x.batch(); ++n)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int co = 0; co < cout; ++co) {
          double s = 0;
          for (int a = 0; a < kh; ++a)
            for (int b = 0; b < kw; ++b) {
              const int iy = oy * stride - ph + a * dil;
              const int ix = ox * stride - pw + b * dil;
              if (iy < 0 || iy >= x.height() || ix < 0 || ix >= x.width()) continue;
              if (depthwise) {
                s += x.at(n, iy, ix, co) * kat(a, b, co, 0);
              } else {
                for (int ci = 0; ci < cin; ++ci) s += x.at(n, iy, ix, ci) * kat(a, b, ci, co);
              }
            }
          out.at(n, oy, ox, co) = s;
        }
  return out;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename F>
double fd_rel_err(Tensor<double>& x, const Tensor<double>& grad, F f) {
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    const double n = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(n - grad[i]) / std::max({std::abs(n), std::abs(grad[i]), 1e-6}));
  }
  return worst;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  const auto x = random_tensor<float>({2, 4, 5, 1}, rng);
  Tensor<float> k(1, 1, 1, 1, 1.f);
  EXPECT_EQ(conv2d(x, k, {}), x);
}

TEST(Conv2d, AllOnesHandConvolution) {
  Tensor<float> x(1, 3, 3, 1, 1.f);
  Tensor<float> k(3, 3, 1, 1, 1.f);
  const auto y = conv2d(x, k, {});
  EXPECT_EQ(y.at(0, 1, 1, 0), 9.f);
  EXPECT_EQ(y.at(0, 0, 1, 0), 6.f);
  EXPECT_EQ(y.at(0, 1, 2, 0), 6.f);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.f);
  EXPECT_EQ(y.at(0, 2, 2, 0), 4.f);
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 3 + static_cast<int>(rng.below(7));
    const int w = 3 + static_cast<int>(rng.below(7));
    const int cin = 1 + static_cast<int>(rng.below(4));
    const int cout = 1 + static_cast<int>(rng.below(4));
    const int k = rng.bernoulli(0.3) ? 1 : 3;
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int dil = 1 + static_cast<int>(rng.below(3));
    const auto x = random_tensor<double>({2, h, w, cin}, rng);
    const auto kern = random_tensor<double>({k, k, cin, cout}, rng);
    const auto got = conv2d(x, kern, {stride, dil});
    const auto want = conv_oracle(x, kern, stride, dil, false);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(testutil::max_abs_diff(got, want), 1e-12);
    EXPECT_EQ(got.height(), (h + stride - 1) / stride);
  }
}

TEST(Conv2d, Linearity) {
  Rng rng(3);
  const auto x = random_tensor<double>({1, 6, 6, 3}, rng);
  const auto y = random_tensor<double>({1, 6, 6, 3}, rng);
  const auto k = random_tensor<double>({3, 3, 3, 2}, rng);
  Tensor<double> mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = 2.5 * x[i] - 0.7 * y[i];
  const auto lhs = conv2d(mix, k, {1, 2});
  const auto cx = conv2d(x, k, {1, 2});
  const auto cy = conv2d(y, k, {1, 2});
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    EXPECT_NEAR(lhs[i], 2.5 * cx[i] - 0.7 * cy[i], 1e-6 * std::max(1.0, std::abs(lhs[i])));
  }
}

TEST(Conv2d, RejectsBadInput) {
  Tensor<float> x(1, 4, 4, 2);
  EXPECT_THROW(conv2d(x, Tensor<float>(3, 3, 3, 1), {}), std::invalid_argument);
  EXPECT_THROW(conv2d(x, Tensor<float>(3, 3, 2, 1), {0, 1}), std::invalid_argument);
  x[0] = std::nanf("");
  EXPECT_THROW(conv2d(x, Tensor<float>(3, 3, 2, 1), {}), std::invalid_argument);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int seed = 0; seed < 5; ++seed) {
    auto x = random_tensor<double>({1, 5, 5, 2}, rng);
    auto k = random_tensor<double>({3, 3, 2, 2}, rng);
    const ConvSpec spec{1 + seed % 2, 1 + seed % 3};
    const auto r = random_tensor<double>(conv2d(x, k, spec).shape(), rng);
    Tensor<double> gx;
    Tensor<double> gk(k.shape());
    conv2d_backward(x, k, spec, r, &gx, &gk);
    auto f = [&] { return dot(conv2d(x, k, spec), r); };
    EXPECT_LT(fd_rel_err(x, gx, f), 1e-4);
    EXPECT_LT(fd_rel_err(k, gk, f), 1e-4);
  }
}

TEST(Conv2d, KernelGradientAccumulates) {
  Rng rng(5);
  const auto x = random_tensor<double>({1, 4, 4, 1}, rng);
  const auto k = random_tensor<double>({3, 3, 1, 1}, rng);
  const auto r = random_tensor<double>({1, 4, 4, 1}, rng);
  Tensor<double> once(k.shape());
  conv2d_backward<double>(x, k, {}, r, nullptr, &once);
  Tensor<double> twice(k.shape());
  conv2d_backward<double>(x, k, {}, r, nullptr, &twice);
  conv2d_backward<double>(x, k, {}, r, nullptr, &twice);
  for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(twice[i], 2 * once[i], 1e-12);
}

TEST(Depthwise, MatchesOracleAndSeparableIdentity) {
  Rng rng(6);
  const auto x = random_tensor<double>({2, 6, 5, 3}, rng);
  const auto dw = random_tensor<double>({3, 3, 3, 1}, rng);
  for (int stride : {1, 2}) {
    EXPECT_LT(testutil::max_abs_diff(depthwise_conv2d(x, dw, {stride, 1}),
                                     conv_oracle(x, dw, stride, 1, true)),
              1e-12);
  }
  Tensor<double> delta(3, 3, 3, 1);
  for (int c = 0; c < 3; ++c) delta.at(1, 1, c, 0) = 1.0;
  Tensor<double> eye(1, 1, 3, 3);
  for (int c = 0; c < 3; ++c) eye.at(0, 0, c, c) = 1.0;
  EXPECT_EQ(depthwise_separable_conv(x, delta, eye, 1), x);
}

TEST(Depthwise, SingleChannelEqualsConv) {
  Rng rng(7);
  const auto x = random_tensor<double>({1, 7, 7, 1}, rng);
  const auto k = random_tensor<double>({3, 3, 1, 1}, rng);
  Tensor<double> one(1, 1, 1, 1, 1.0);
  EXPECT_LT(testutil::max_abs_diff(depthwise_separable_conv(x, k, one, 1), conv2d(x, k, {})), 1e-12);
}

TEST(Depthwise, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  auto x = random_tensor<double>({1, 5, 5, 3}, rng);
  auto k = random_tensor<double>({3, 3, 3, 1}, rng);
  const auto r = random_tensor<double>({1, 3, 3, 3}, rng);
  Tensor<double> gx;
  Tensor<double> gk(k.shape());
  depthwise_conv2d_backward(x, k, {2, 1}, r, &gx, &gk);
  auto f = [&] { return dot(depthwise_conv2d(x, k, {2, 1}), r); };
  EXPECT_LT(fd_rel_err(x, gx, f), 1e-4);
  EXPECT_LT(fd_rel_err(k, gk, f), 1e-4);
}

TEST(BatchNorm, ConstantChannelGivesShift) {
  Tensor<double> x(2, 3, 3, 1, 4.0);
  Tensor<double> scale(1, 1, 1, 1, 2.0), shift(1, 1, 1, 1, 0.25), mean(1, 1, 1, 1), var(1, 1, 1, 1, 1.0);
  const auto y = batchnorm<double>(x, scale, shift, mean, var, Mode::Train, 0.9, 1e-5, nullptr);
  for (auto v : y.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_NEAR(mean[0], 0.4, 1e-12);
  EXPECT_NEAR(var[0], 0.9, 1e-12);
}

TEST(BatchNorm, NormalizedInputPassesThrough) {
  Rng rng(9);
  auto x = random_tensor<double>({4, 6, 6, 2}, rng);
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    const double n = x.size() / 2.0;
    for (std::size_t i = c; i < x.size(); i += 2) m += x[i];
    m /= n;
    for (std::size_t i = c; i < x.size(); i += 2) v += (x[i] - m) * (x[i] - m);
    const double sd = std::sqrt(v / n);
    for (std::size_t i = c; i < x.size(); i += 2) x[i] = (x[i] - m) / sd;
  }
  Tensor<double> scale(1, 1, 1, 2, 1.0), shift(1, 1, 1, 2), mean(1, 1, 1, 2), var(1, 1, 1, 2, 1.0);
  const auto y = batchnorm<double>(x, scale, shift, mean, var, Mode::Train, 0.9, 1e-5, nullptr);
  auto expect = x;
  for (auto& v : expect.values()) v /= std::sqrt(1.0 + 1e-5);
  EXPECT_LT(testutil::max_abs_diff(expect, y), 1e-12);
}

TEST(BatchNorm, InferUsesRunningStatistics) {
  Tensor<double> x(1, 1, 2, 1);
  x[0] = 1.0;
  x[1] = 3.0;
  Tensor<double> scale(1, 1, 1, 1, 1.0), shift(1, 1, 1, 1), mean(1, 1, 1, 1, 1.0), var(1, 1, 1, 1, 4.0);
  const auto y = batchnorm<double>(x, scale, shift, mean, var, Mode::Infer, 0.9, 0.0 + 1e-12, nullptr);
  EXPECT_NEAR(y[0], 0.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
  EXPECT_EQ(mean[0], 1.0);
  Tensor<double> bad(1, 1, 1, 2);
  EXPECT_THROW(batchnorm<double>(x, bad, shift, mean, var, Mode::Infer, 0.9, 1e-5, nullptr), std::invalid_argument);
}

TEST(BatchNorm, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  auto x = random_tensor<double>({2, 3, 3, 2}, rng);
  auto scale = random_tensor<double>({1, 1, 1, 2}, rng);
  auto shift = random_tensor<double>({1, 1, 1, 2}, rng);
  const auto r = random_tensor<double>(x.shape(), rng);
  auto fwd = [&](BatchNormCache<double>* c) {
    Tensor<double> m(1, 1, 1, 2), v(1, 1, 1, 2, 1.0);
    return batchnorm(x, scale, shift, m, v, Mode::Train, 0.9, 1e-5, c);
  };
  BatchNormCache<double> cache;
  fwd(&cache);
  Tensor<double> gs(scale.shape()), gb(shift.shape());
  const auto gx = batchnorm_backward(cache, scale, r, &gs, &gb);
  auto f = [&] { return dot(fwd(nullptr), r); };
  EXPECT_LT(fd_rel_err(x, gx, f), 1e-4);
  EXPECT_LT(fd_rel_err(scale, gs, f), 1e-4);
  EXPECT_LT(fd_rel_err(shift, gb, f), 1e-4);
}

TEST(Activations, ReluValues) {
  Tensor<float> x(1, 1, 3, 1);
  x[0] = -1;
  x[1] = 0;
  x[2] = 2;
  const auto y = relu(x);
  EXPECT_EQ(y[0], 0);
  EXPECT_EQ(y[1], 0);
  EXPECT_EQ(y[2], 2);
}

TEST(Activations, SoftmaxPairSumsToOne) {
  Tensor<float> zero(1, 1, 1, 2);
  const auto half = softmax_pair(zero, 0);
  EXPECT_EQ(half[0], 0.5f);
  EXPECT_EQ(half[1], 0.5f);
  Rng rng(11);
  const auto x = random_tensor<float>({2, 5, 5, 4}, rng, 30.0);
  const auto p = softmax_pair(softmax_pair(x, 0), 2);
  for (std::size_t i = 0; i < p.size(); i += 4) {
    EXPECT_NEAR(p[i] + p[i + 1], 1.0, 1e-6);
    EXPECT_NEAR(p[i + 2] + p[i + 3], 1.0, 1e-6);
    for (int c = 0; c < 4; ++c) {
      EXPECT_GE(p[i + c], 0.0f);
      EXPECT_LE(p[i + c], 1.0f);
    }
  }
  const auto only_first = softmax_pair(x, 0);
  for (std::size_t i = 0; i < x.size(); i += 4) EXPECT_EQ(only_first[i + 2], x[i + 2]);
}

TEST(Resize, CornerAlignedTwoByTwo) {
  Tensor<double> x(1, 2, 2, 1);
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  x[3] = 4;
  const auto y = upsample(x, 2);
  ASSERT_EQ(y.height(), 4);
  EXPECT_EQ(y.at(0, 0, 0, 0), 1);
  EXPECT_EQ(y.at(0, 0, 3, 0), 2);
  EXPECT_EQ(y.at(0, 3, 0, 0), 3);
  EXPECT_EQ(y.at(0, 3, 3, 0), 4);
  // Interior sample at (1/3, 1/3) of the source cell.
  EXPECT_NEAR(y.at(0, 1, 1, 0), 1 + 1.0 / 3 + 2.0 / 3, 1e-12);
  EXPECT_THROW(upsample(x, 0), std::invalid_argument);
}

TEST(Resize, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  auto x = random_tensor<double>({1, 3, 4, 2}, rng);
  const auto r = random_tensor<double>({1, 7, 5, 2}, rng);
  const auto gx = bilinear_resize_backward(r, 3, 4);
  EXPECT_LT(fd_rel_err(x, gx, [&] { return dot(bilinear_resize(x, 7, 5), r); }), 1e-4);
}

TEST(Dropout, InferIsIdentityAndTrainScales) {
  Rng rng(13);
  const auto x = random_tensor<float>({1, 8, 8, 4}, rng);
  EXPECT_EQ(dropout<float>(x, 0.5, rng, Mode::Infer, nullptr), x);
  Tensor<float> mask;
  const auto y = dropout(x, 0.5, rng, Mode::Train, &mask);
  int kept = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_TRUE(mask[i] == 0.f || mask[i] == 2.f);
    EXPECT_EQ(y[i], x[i] * mask[i]);
    kept += mask[i] != 0.f;
  }
  EXPECT_GT(kept, 64);
  EXPECT_LT(kept, 192);
}

TEST(Pool, GlobalAverage) {
  Tensor<double> x(1, 2, 2, 2);
  for (int i = 0; i < 8; ++i) x[i] = i;
  const auto p = global_avg_pool(x);
  EXPECT_DOUBLE_EQ(p[0], 3.0);
  EXPECT_DOUBLE_EQ(p[1], 4.0);
}

TEST(Concat, SplitInvertsConcat) {
  Rng rng(14);
  const auto a = random_tensor<float>({2, 3, 3, 2}, rng);
  const auto b = random_tensor<float>({2, 3, 3, 5}, rng);
  auto [ra, rb] = split_channels(concat_channels(a, b), 2);
  EXPECT_EQ(ra, a);
  EXPECT_EQ(rb, b);
}

TEST(Determinism, ConvForwardBackwardBitIdentical) {
  Rng r1(15), r2(15);
  const auto x1 = random_tensor<float>({4, 12, 12, 8}, r1);
  const auto x2 = random_tensor<float>({4, 12, 12, 8}, r2);
  const auto k = random_tensor<float>({3, 3, 8, 8}, r1);
  EXPECT_EQ(conv2d(x1, k, {}), conv2d(x2, k, {}));
  Tensor<float> g1, g2, gk1(k.shape()), gk2(k.shape());
  conv2d_backward(x1, k, {}, x1, &g1, &gk1);
  conv2d_backward(x2, k, {}, x2, &g2, &gk2);
  EXPECT_EQ(g1, g2);
  EXPECT_EQ(gk1, gk2);
}
