#include <gtest/gtest.h>

#include <cmath>

#include "mafaseg/contour.hpp"
#include "mafaseg/nn.hpp"
#include "test_util.hpp"

using namespace mafaseg;

namespace {

BinaryMask band_oracle(const BinaryMask& m, int width) {
  BinaryMask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      int best = std::min({y + 1, x + 1, m.height - y, m.width - x});
      for (int v = 0; v < m.height; ++v)
        for (int u = 0; u < m.width; ++u)
          if (!m.at(v, u)) best = std::min(best, std::abs(v - y) + std::abs(u - x));
      out.at(y, x) = best <= width ? 1 : 0;
    }
  }
  return out;
}

Tensor<double> random_probs(int n, int h, int w, Rng& rng) {
  return nn::softmax_pair(testutil::random_tensor<double>({n, h, w, 2}, rng), 0);
}

}  // namespace

TEST(ContourBand, SquareExample) {
  BinaryMask m(11, 11);
  for (int y = 2; y < 9; ++y)
    for (int x = 2; x < 9; ++x) m.at(y, x) = 1;
  const auto band = contour::contour_band(m, 3);
  EXPECT_EQ(band.count(), 48u);
  EXPECT_EQ(band.at(5, 5), 0);
}

TEST(ContourBand, GridEdgeCountsAsBackground) {
  BinaryMask full(9, 9, 1);
  const auto band = contour::contour_band(full, 3);
  EXPECT_EQ(band.count(), 81u - 9u);
  EXPECT_EQ(band.at(4, 4), 0);
  EXPECT_EQ(contour::contour_band(BinaryMask(5, 5), 3).count(), 0u);
}

TEST(ContourBand, MatchesBruteForce) {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const int h = 6 + static_cast<int>(rng.below(12));
    const int w = 6 + static_cast<int>(rng.below(12));
    const auto m = testutil::random_mask(h, w, rng, 0.3 + 0.6 * rng.uniform());
    const int width = 1 + static_cast<int>(rng.below(4));
    EXPECT_EQ(contour::contour_band(m, width), band_oracle(m, width));
  }
}

TEST(ContourGt, OneHot) {
  BinaryMask m(4, 4);
  m.at(1, 1) = 1;
  const auto gt = contour::extract_contour_gt<float>(m);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      EXPECT_EQ(gt.at(0, y, x, 1), m.at(y, x) ? 1.f : 0.f);
      EXPECT_EQ(gt.at(0, y, x, 0) + gt.at(0, y, x, 1), 1.f);
    }
  }
}

TEST(DiceLoss, ClosedForm) {
  // C = 0.5 everywhere on a 2x2 image, C' = one pixel.
  Tensor<double> pred(1, 2, 2, 2);
  for (int i = 0; i < 4; ++i) pred[2 * i] = pred[2 * i + 1] = 0.5;
  Tensor<double> gt(1, 2, 2, 2);
  gt.at(0, 0, 0, 1) = 1;
  const auto r = contour::dice_contour_loss(pred, gt);
  EXPECT_NEAR(r.loss, 1.0 - 1.0 / (1.0 + 1.0 + 1e-6), 1e-12);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(r.grad[2 * i], 0.0);

  const auto perfect = contour::dice_contour_loss(gt, gt);
  EXPECT_NEAR(perfect.loss, 1e-6 / 2.0, 1e-9);
  Tensor<double> empty(1, 2, 2, 2);
  EXPECT_NEAR(contour::dice_contour_loss(empty, empty).loss, 1.0, 1e-12);
}

TEST(DiceLoss, GradientMatchesFiniteDifference) {
  Rng rng(22);
  const auto p = random_probs(2, 5, 4, rng);
  auto gt = random_probs(2, 5, 4, rng);
  for (auto& v : gt.values()) v = v > 0.5 ? 1.0 : 0.0;
  const auto r = contour::dice_contour_loss(p, gt);
  const double h = 1e-6;
  for (std::size_t i = 1; i < p.size(); i += 2) {
    auto a = p, b = p;
    a[i] += h;
    b[i] -= h;
    const double fd = (contour::dice_contour_loss(a, gt).loss -
                       contour::dice_contour_loss(b, gt).loss) / (2 * h);
    EXPECT_NEAR(r.grad[i], fd, 1e-7);
  }
}

TEST(CrossEntropy, ClosedFormAndLogitGradient) {
  Rng rng(23);
  const auto logits = testutil::random_tensor<double>({2, 3, 4, 2}, rng);
  const auto p = nn::softmax_pair(logits, 0);
  Tensor<double> gt(p.shape());
  for (std::size_t i = 0; i < gt.size(); i += 2) {
    const bool fg = rng.bernoulli(0.4);
    gt[i] = fg ? 0 : 1;
    gt[i + 1] = fg ? 1 : 0;
  }
  double expect = 0;
  for (std::size_t i = 0; i < p.size(); ++i) expect -= gt[i] * std::log(p[i]);
  expect /= (3 * 4 * 2) * 2;
  const auto r = contour::cross_entropy_seg_loss(p, gt);
  EXPECT_NEAR(r.loss, expect, 1e-12);

  const double h = 1e-5;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto a = logits, b = logits;
    a[i] += h;
    b[i] -= h;
    const double fd = (contour::cross_entropy_seg_loss(nn::softmax_pair(a, 0), gt).loss -
                       contour::cross_entropy_seg_loss(nn::softmax_pair(b, 0), gt).loss) / (2 * h);
    EXPECT_NEAR(r.grad[i], fd, 1e-8);
    EXPECT_NEAR(r.grad[i], (p[i] - gt[i]) / 24.0 / 2.0, 1e-12);
  }
  EXPECT_DOUBLE_EQ(contour::total_loss(0.25, 0.5), 0.75);
}
