#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <optional>

#include "mafaseg/data.hpp"
#include "test_util.hpp"

using namespace mafaseg;
using namespace mafaseg::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mafaseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Point-to-segment distance by projection clamped to the segment.
bool capsule_oracle(const Capsule& c, double y, double x) {
  const double vy = c.by - c.ay, vx = c.bx - c.ax;
  double t = ((y - c.ay) * vy + (x - c.ax) * vx) / (vy * vy + vx * vx);
  t = std::clamp(t, 0.0, 1.0);
  const double dy = y - (c.ay + t * vy), dx = x - (c.ax + t * vx);
  return dy * dy + dx * dx <= c.radius * c.radius;
}

}  // namespace

TEST(Synthetic, DeterministicFromSeed) {
  SynthOptions o;
  o.size = 32;
  const auto a = generate_synthetic(4, 12, o);
  const auto b = generate_synthetic(4, 12, o);
  const auto c = generate_synthetic(5, 12, o);
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].mask, b[i].mask);
  }
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= !(a[i].image == c[i].image);
  EXPECT_TRUE(differs);
  EXPECT_EQ(a[0].id, "syn_00000");
  EXPECT_EQ(a[0].subset, "subset01");
  EXPECT_EQ(a[11].subset, "subset10");
}

TEST(Synthetic, MaskIsCapsuleAndImageInRange) {
  SynthOptions o;
  o.size = 48;
  int empty = 0;
  for (int i = 0; i < 200; ++i) {
    std::optional<Capsule> cap;
    const auto s = generate_scene(9, i, o, &cap);
    for (float v : s.image.values()) {
      ASSERT_GE(v, 0.f);
      ASSERT_LE(v, 1.f);
    }
    if (!cap) {
      EXPECT_EQ(s.mask.count(), 0u);
      ++empty;
      continue;
    }
    for (int y = 0; y < o.size; ++y)
      for (int x = 0; x < o.size; ++x) ASSERT_EQ(s.mask.at(y, x), capsule_oracle(*cap, y, x) ? 1 : 0);
    EXPECT_GT(s.mask.count(), 0u);
    EXPECT_LE(s.mask.count(), static_cast<std::size_t>(0.4 * o.size * o.size));
  }
  EXPECT_GT(empty, 5);
  EXPECT_LT(empty, 40);
}

TEST(Synthetic, LowContrastHasSmallerTipContrast) {
  SynthOptions hi, lo;
  hi.size = lo.size = 48;
  lo.difficulty = Difficulty::LowContrast;
  double dhi = 0, dlo = 0;
  for (int i = 0; i < 30; ++i) {
    for (auto [opts, acc] : {std::pair{&hi, &dhi}, std::pair{&lo, &dlo}}) {
      const auto s = generate_scene(3, i, *opts);
      if (s.mask.count() == 0) continue;
      double fg = 0, bg = 0;
      std::size_t nf = 0, nb = 0;
      for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
          const double v = s.image.at(0, y, x, 2);
          if (s.mask.at(y, x)) fg += v, ++nf;
          else bg += v, ++nb;
        }
      *acc += std::abs(fg / nf - bg / nb);
    }
  }
  EXPECT_LT(dlo, dhi);
  EXPECT_EQ(parse_difficulty(to_string(Difficulty::LowContrast)), Difficulty::LowContrast);
}

TEST(Png, RoundTrip) {
  const auto dir = scratch("png");
  SynthOptions o;
  o.size = 24;
  auto s = generate_scene(1, 3, o);
  write_png_rgb(dir / "i.png", s.image);
  write_png_mask(dir / "m.png", s.mask);
  const auto img = read_png_rgb(dir / "i.png");
  EXPECT_EQ(read_png_mask(dir / "m.png"), s.mask);
  ASSERT_EQ(img.shape(), s.image.shape());
  EXPECT_LE(testutil::max_abs_diff(img, s.image), 0.5 / 255.0 + 1e-6);
  EXPECT_THROW(read_png_rgb(dir / "missing.png"), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto dir = scratch("dataset");
  SynthOptions o;
  o.size = 16;
  o.subsets = 3;
  const auto samples = generate_synthetic(2, 6, o);
  save_dataset(dir, samples);
  const auto loaded = load_dataset(dir);
  ASSERT_EQ(loaded.size(), samples.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_EQ(loaded[i].id, samples[i].id);
    EXPECT_EQ(loaded[i].subset, samples[i].subset);
    EXPECT_EQ(loaded[i].mask, samples[i].mask);
  }
  fs::remove_all(dir);
}

TEST(Augment, FlipsAreIndexReversals) {
  Rng rng(5);
  auto img = testutil::random_tensor<float>({1, 7, 5, 3}, rng);
  GeometricParams g;
  g.flip_lr = true;
  const auto lr = apply_geometric(img, g);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(lr.at(0, y, x, c), std::clamp(img.at(0, y, 4 - x, c), 0.f, 1.f));
  g = {};
  g.flip_ud = true;
  const auto m = testutil::random_mask(7, 5, rng);
  const auto ud = apply_geometric(m, g);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 5; ++x) EXPECT_EQ(ud.at(y, x), m.at(6 - y, x));
}

TEST(Augment, HsvRoundTripAndHueWrap) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const double r = rng.uniform(), g = rng.uniform(), b = rng.uniform();
    double h, s, v, r2, g2, b2;
    rgb_to_hsv(r, g, b, h, s, v);
    ASSERT_GE(h, 0.0);
    ASSERT_LT(h, 1.0);
    hsv_to_rgb(h, s, v, r2, g2, b2);
    EXPECT_NEAR(r, r2, 1e-9);
    EXPECT_NEAR(g, g2, 1e-9);
    EXPECT_NEAR(b, b2, 1e-9);
  }
  // Pure red shifted by -0.1 wraps to hue 0.9.
  RasterMap red(1, 1, 1, 3);
  red[0] = 1.f;
  PhotometricParams p;
  p.hue_shift = -0.1;
  const auto out = apply_photometric(red, p);
  double h, s, v;
  rgb_to_hsv(out[0], out[1], out[2], h, s, v);
  EXPECT_NEAR(h, 0.9, 1e-5);
}

TEST(Augment, GeometryConsistentBetweenImageAndMask) {
  // A mask drawn into the image stays aligned with the transformed mask.
  SynthOptions o;
  o.size = 40;
  Rng rng(7);
  AugmentConfig cfg;
  cfg.hue = cfg.brightness = cfg.saturation = cfg.contrast = false;
  for (int i = 0; i < 20; ++i) {
    Sample s = generate_scene(11, i, o);
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x)
        for (int c = 0; c < 3; ++c) s.image.at(0, y, x, c) = s.mask.at(y, x) ? 1.f : 0.f;
    GeometricParams used;
    const auto a = augment(s, cfg, rng, &used);
    std::size_t agree = 0;
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x) agree += (a.image.at(0, y, x, 0) > 0.5f) == (a.mask.at(y, x) != 0);
    EXPECT_GE(agree, static_cast<std::size_t>(0.97 * 1600)) << "sample " << i;
  }
}

TEST(Augment, NoneIsIdentityAndDeterministic) {
  SynthOptions o;
  o.size = 24;
  const auto s = generate_scene(1, 1, o);
  Rng r1(3);
  const auto same = augment(s, AugmentConfig::none(), r1);
  EXPECT_EQ(same.image, s.image);
  EXPECT_EQ(same.mask, s.mask);
  Rng a(9), b(9);
  EXPECT_EQ(augment(s, AugmentConfig{}, a).image, augment(s, AugmentConfig{}, b).image);
  AugmentConfig bad;
  bad.zoom_out_min = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(KFold, ContiguousRunsLargerFirst) {
  SynthOptions o;
  o.size = 8;
  const auto samples = generate_synthetic(1, 20, o);
  const auto folds = kfold_split(samples, 3);
  ASSERT_EQ(folds.size(), 3u);
  const std::size_t sizes[3] = {8, 6, 6};
  std::vector<int> seen(samples.size(), 0);
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(folds[f].test.size(), sizes[f]);
    EXPECT_EQ(folds[f].train.size() + folds[f].test.size(), samples.size());
    for (auto i : folds[f].test) ++seen[i];
  }
  for (int v : seen) EXPECT_EQ(v, 1);
  EXPECT_EQ(samples[folds[0].test.back()].subset, "subset04");
  EXPECT_EQ(samples[folds[1].test.front()].subset, "subset05");

  const auto grouped = kfold_split(samples, 2, {{"subset01"}, {"subset02", "subset03", "subset04", "subset05",
                                                                "subset06", "subset07", "subset08", "subset09",
                                                                "subset10"}});
  EXPECT_EQ(grouped[0].test.size(), 2u);
  EXPECT_THROW(kfold_split(samples, 2, {{"subset01"}, {"subset02"}}), std::invalid_argument);
  EXPECT_THROW(kfold_split(samples, 11), std::invalid_argument);
}
