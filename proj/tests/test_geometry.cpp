#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mafaseg/geometry.hpp"
#include "test_util.hpp"

using namespace mafaseg;
using namespace mafaseg::geometry;

namespace {

constexpr auto kExact = RotationMode::ExactQuarter;
constexpr auto kBilinear = RotationMode::Bilinear;

Tensor<float> from_rows(int h, int w, std::initializer_list<float> v) {
  Tensor<float> t(1, h, w, 1);
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

// Band-limited test image: neighbouring pixels differ by well under 0.5.
Tensor<double> smooth_image(int size, Rng& rng) {
  Tensor<double> t(1, size, size, 2);
  const double f1 = rng.uniform(0.05, 0.2);
  const double f2 = rng.uniform(0.05, 0.2);
  const double p = rng.uniform(0.0, 6.28);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      t.at(0, y, x, 0) = 0.5 + 0.5 * std::sin(f1 * x + f2 * y + p);
      t.at(0, y, x, 1) = 0.5 + 0.4 * std::cos(f2 * x - f1 * y);
    }
  }
  return t;
}

}  // namespace

TEST(Angle, NormalizesIdempotently) {
  EXPECT_DOUBLE_EQ(Angle(370).degrees(), 10.0);
  EXPECT_DOUBLE_EQ(Angle(-90).degrees(), 270.0);
  EXPECT_DOUBLE_EQ(Angle(360).degrees(), 0.0);
  EXPECT_DOUBLE_EQ(Angle(-0.0).degrees(), 0.0);
  EXPECT_FALSE(std::signbit(Angle(-0.0).degrees()));
  const Angle a(-725.5);
  EXPECT_EQ(Angle(a.degrees()), a);
  EXPECT_THROW(Angle(std::nan("")), std::invalid_argument);
}

TEST(Angle, QuarterTurnsAreExact) {
  for (int q = 0; q < 4; ++q) {
    const Angle a(90.0 * q);
    EXPECT_TRUE(a.is_quarter());
    EXPECT_EQ(a.quarter_turns(), q);
    EXPECT_EQ(std::abs(a.sin()) + std::abs(a.cos()), 1.0);
  }
  EXPECT_THROW(Angle(45).quarter_turns(), std::invalid_argument);
}

TEST(Rotate, IdentityIsBitExact) {
  Rng rng(1);
  const auto x = testutil::random_tensor<float>({2, 5, 7, 3}, rng);
  EXPECT_EQ(rotate(x, Angle(0), kBilinear), x);
  const auto sq = testutil::random_tensor<float>({1, 6, 6, 2}, rng);
  EXPECT_EQ(rotate(sq, Angle(0), kExact), sq);
  EXPECT_EQ(align(sq, Angle(0), kExact), sq);
}

TEST(Rotate, QuarterTurnOfTwoByTwo) {
  const auto x = from_rows(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(rotate(x, Angle(90), kExact), from_rows(2, 2, {2, 4, 1, 3}));
}

TEST(Rotate, ExactQuarterMatchesPermutationOracle) {
  Rng rng(2);
  for (int size : {1, 2, 5, 8}) {
    const auto x = testutil::random_tensor<double>({2, size, size, 3}, rng);
    const auto r = rotate(x, Angle(90), kExact);
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          for (int c = 0; c < 3; ++c) EXPECT_EQ(r.at(n, i, j, c), x.at(n, j, size - 1 - i, c));
        }
      }
    }
  }
}

TEST(Rotate, ExactQuarterRejectsBadInput) {
  Tensor<float> rect(1, 3, 4, 1);
  EXPECT_THROW(rotate(rect, Angle(90), kExact), std::invalid_argument);
  Tensor<float> sq(1, 3, 3, 1);
  EXPECT_THROW(rotate(sq, Angle(45), kExact), std::invalid_argument);
  sq[4] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(rotate(sq, Angle(0), kBilinear), std::invalid_argument);
}

TEST(Rotate, QuarterGroupClosure) {
  Rng rng(3);
  for (int size : {3, 4, 7}) {
    const auto x = testutil::random_tensor<float>({1, size, size, 2}, rng);
    for (int a = 0; a < 360; a += 90) {
      for (int b = 0; b < 360; b += 90) {
        EXPECT_EQ(rotate(rotate(x, Angle(a), kExact), Angle(b), kExact),
                  rotate(x, Angle((a + b) % 360), kExact));
      }
      EXPECT_EQ(align(rotate(x, Angle(a), kExact), Angle(a), kExact), x);
    }
  }
}

TEST(Rotate, BilinearQuarterEqualsPermutation) {
  Rng rng(4);
  const auto x = testutil::random_tensor<double>({1, 6, 6, 2}, rng);
  for (int a = 0; a < 360; a += 90) {
    EXPECT_EQ(rotate(x, Angle(a), kBilinear), rotate(x, Angle(a), kExact));
  }
}

TEST(Rotate, CenterIsFixedPoint) {
  Tensor<double> delta(1, 7, 7, 1);
  delta.at(0, 3, 3, 0) = 1.0;
  const auto r = rotate(delta, Angle(45), kBilinear);
  EXPECT_NEAR(r.at(0, 3, 3, 0), 1.0, 1e-12);
}

TEST(Rotate, PositiveAngleIsCounterclockwise) {
  // A point right of center moves up (towards row 0) under a positive turn.
  const int size = 21;
  const double c = (size - 1) / 2.0;
  const double d = 8.0;
  for (double deg : {30.0, 90.0, 135.0}) {
    Tensor<double> x(1, size, size, 1);
    x.at(0, static_cast<int>(c), static_cast<int>(c + d), 0) = 1.0;
    const auto r = rotate(x, Angle(deg), kBilinear);
    double my = 0, mx = 0, mass = 0;
    for (int i = 0; i < size; ++i) {
      for (int j = 0; j < size; ++j) {
        my += i * r.at(0, i, j, 0);
        mx += j * r.at(0, i, j, 0);
        mass += r.at(0, i, j, 0);
      }
    }
    const double rad = deg * std::numbers::pi / 180.0;
    EXPECT_NEAR(my / mass, c - d * std::sin(rad), 0.35) << deg;
    EXPECT_NEAR(mx / mass, c + d * std::cos(rad), 0.35) << deg;
  }
}

TEST(Rotate, BilinearRoundtripWithinSafeDisc) {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int size = 24 + 2 * trial;
    const auto x = smooth_image(size, rng);
    const auto disc = safe_disc_mask(size, size, 2);
    const Angle a(rng.uniform(0, 360));
    const auto back = align(rotate(x, a, kBilinear), a, kBilinear);
    for (int i = 0; i < size; ++i) {
      for (int j = 0; j < size; ++j) {
        if (!disc.at(i, j)) continue;
        for (int c = 0; c < 2; ++c) worst = std::max(worst, std::abs(back.at(0, i, j, c) - x.at(0, i, j, c)));
      }
    }
  }
  EXPECT_LE(worst, 0.02);
}

TEST(Rotate, ZeroPaddingAtCorners) {
  const int size = 16;
  Tensor<double> ones(1, size, size, 1, 1.0);
  const auto r = rotate(ones, Angle(45), kBilinear);
  EXPECT_LT(r.at(0, 0, 0, 0), 1.0);
  EXPECT_LT(r.at(0, size - 1, size - 1, 0), 1.0);
  const Affine m = Affine::rotation(size, size, Angle(45));
  int fully_outside = 0;
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const double sy = m.rr * i + m.rc * j + m.r0;
      const double sx = m.cr * i + m.cc * j + m.c0;
      if (sy <= -1 || sy >= size || sx <= -1 || sx >= size) {
        ++fully_outside;
        EXPECT_EQ(r.at(0, i, j, 0), 0.0);
      }
    }
  }
  EXPECT_GT(fully_outside, 0);
}

TEST(Rotate, ChannelIndependence) {
  Rng rng(6);
  const auto x = testutil::random_tensor<float>({1, 9, 9, 3}, rng);
  const auto r = rotate(x, Angle(33), kBilinear);
  for (int c = 0; c < 3; ++c) {
    Tensor<float> slice(1, 9, 9, 1);
    for (int i = 0; i < 81; ++i) slice[i] = x[i * 3 + c];
    const auto rs = rotate(slice, Angle(33), kBilinear);
    for (int i = 0; i < 81; ++i) EXPECT_EQ(rs[i], r[i * 3 + c]);
  }
}

TEST(Rotate, AdjointIsTranspose) {
  Rng rng(7);
  for (auto mode : {kBilinear, kExact}) {
    const auto x = testutil::random_tensor<double>({2, 8, 8, 2}, rng);
    const auto y = testutil::random_tensor<double>({2, 8, 8, 2}, rng);
    const Angle a = mode == kExact ? Angle(270) : Angle(rng.uniform(0, 360));
    const auto rx = rotate(x, a, mode);
    const auto aty = rotate_adjoint(y, a, mode);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lhs += rx[i] * y[i];
      rhs += x[i] * aty[i];
    }
    EXPECT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(RotateMask, StaysBinaryAndInvertsQuarterTurns) {
  Rng rng(8);
  const auto m = testutil::random_mask(9, 9, rng);
  const auto r = rotate_mask(m, Angle(60));
  for (auto b : r.bits) EXPECT_TRUE(b == 0 || b == 1);
  EXPECT_EQ(rotate_mask(rotate_mask(m, Angle(90)), Angle(270)), m);
  EXPECT_EQ(rotate_mask(m, Angle(0)), m);
}

TEST(AngleSet, FollowsFormula) {
  const auto four = angle_set(4);
  ASSERT_EQ(four.size(), 4u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(four[k].degrees(), 90.0 * k);
  ASSERT_EQ(angle_set(1).size(), 1u);
  EXPECT_EQ(angle_set(1)[0].degrees(), 0.0);
  const auto three = angle_set(3);
  EXPECT_DOUBLE_EQ(three[1].degrees(), 120.0);
  EXPECT_DOUBLE_EQ(three[2].degrees(), 240.0);
  EXPECT_THROW(angle_set(0), std::invalid_argument);
}

TEST(SafeDisc, MatchesDistanceOracle) {
  const auto m3 = safe_disc_mask(3, 3, 0);
  EXPECT_EQ(m3.count(), 5u);
  EXPECT_EQ(m3.at(0, 0), 0);
  EXPECT_EQ(m3.at(1, 1), 1);
  EXPECT_EQ(safe_disc_mask(1, 1, 0).count(), 1u);
  EXPECT_EQ(safe_disc_mask(10, 12, 5).count(), 0u);
  EXPECT_THROW(safe_disc_mask(4, 4, -1), std::invalid_argument);
  const auto m = safe_disc_mask(11, 14, 1.5);
  const double r = (11 - 1) / 2.0 - 1.5;
  for (int i = 0; i < 11; ++i) {
    for (int j = 0; j < 14; ++j) {
      const double d = std::hypot(i - 5.0, j - 6.5);
      EXPECT_EQ(m.at(i, j), d <= r ? 1 : 0);
    }
  }
}

TEST(SafeDisc, RotationStaysInsideGrid) {
  for (int size : {8, 9, 16}) {
    const auto disc = safe_disc_mask(size, size, 0);
    for (double deg : {17.0, 45.0, 123.0}) {
      const Affine m = Affine::rotation(size, size, Angle(deg));
      for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
          if (!disc.at(i, j)) continue;
          const double sy = m.rr * i + m.rc * j + m.r0;
          const double sx = m.cr * i + m.cc * j + m.c0;
          EXPECT_GE(sy, -1e-9);
          EXPECT_LE(sy, size - 1 + 1e-9);
          EXPECT_GE(sx, -1e-9);
          EXPECT_LE(sx, size - 1 + 1e-9);
        }
      }
    }
  }
}
