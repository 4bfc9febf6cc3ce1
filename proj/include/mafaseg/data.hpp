#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mafaseg/geometry.hpp"
#include "mafaseg/rng.hpp"
#include "mafaseg/tensor.hpp"

namespace mafaseg::data {

struct Sample {
  RasterMap image;  // (1, H, W, 3) in [0, 1]
  BinaryMask mask;
  std::string id;
  std::string subset;
};

enum class Difficulty { HighContrast, LowContrast };
std::string to_string(Difficulty d);
Difficulty parse_difficulty(const std::string& s);

/// Rectangle with a semicircular tip: every point within `radius` of the
/// segment from (ay, ax) to (by, bx). The shaft end lies outside the frame.
struct Capsule {
  double ay = 0, ax = 0;
  double by = 0, bx = 0;
  double radius = 0;

  bool contains(double y, double x) const;
};

struct SynthOptions {
  int size = 96;
  Difficulty difficulty = Difficulty::HighContrast;
  int subsets = 10;
  double empty_fraction = 0.1;
};

/// One scene; `capsule` is set when the scene contains an instrument.
Sample generate_scene(std::uint64_t seed, int index, const SynthOptions& opts,
                      std::optional<Capsule>* capsule = nullptr);

/// `count` scenes, deterministic from the seed. Sample i belongs to subset
/// floor(i * subsets / count).
std::vector<Sample> generate_synthetic(std::uint64_t seed, int count, const SynthOptions& opts = {});

/// 8-bit PNG I/O. Images are RGB scaled to [0, 1]; masks are grayscale with
/// foreground >= 128 on read and written as {0, 255}.
void write_png_rgb(const std::filesystem::path& path, const RasterMap& image);
void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask);
RasterMap read_png_rgb(const std::filesystem::path& path);
BinaryMask read_png_mask(const std::filesystem::path& path);

/// Writes root/<subset>/images/<id>.png and root/<subset>/masks/<id>.png.
void save_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples);

/// Reads either root/images + root/masks or root/<subset>/images + masks,
/// in sorted filename order. Subset = parent directory of images/.
std::vector<Sample> load_dataset(const std::filesystem::path& root);

struct AugmentConfig {
  bool hue = true;
  double hue_range = 0.1;
  bool brightness = true;
  double brightness_range = 0.2;
  bool saturation = true;
  double saturation_min = 0.7;
  double saturation_max = 1.3;
  bool contrast = true;
  double contrast_min = 0.7;
  double contrast_max = 1.3;
  bool flip_lr = true;
  bool flip_ud = true;
  bool rotation = true;
  bool zoom_in = true;
  double zoom_in_max = 1.25;
  bool zoom_out = true;
  double zoom_out_min = 0.8;

  static AugmentConfig none();
  void validate() const;
};

struct PhotometricParams {
  double hue_shift = 0.0;
  double saturation_scale = 1.0;
  double brightness_shift = 0.0;
  double contrast_scale = 1.0;
};

struct GeometricParams {
  bool flip_lr = false;
  bool flip_ud = false;
  double rotation_deg = 0.0;
  /// > 1 zooms in around the grid center shifted by (offset_y, offset_x);
  /// < 1 zooms out about the grid center with zero padding.
  double scale = 1.0;
  double offset_y = 0.0;
  double offset_x = 0.0;

  bool identity() const;
  /// Output-to-source coordinate map for an h x w grid.
  geometry::Affine source_map(int height, int width) const;
};

PhotometricParams sample_photometric(const AugmentConfig& cfg, Rng& rng);
GeometricParams sample_geometric(const AugmentConfig& cfg, Rng& rng, int height, int width);

RasterMap apply_photometric(const RasterMap& image, const PhotometricParams& p);
RasterMap apply_geometric(const RasterMap& image, const GeometricParams& g);
BinaryMask apply_geometric(const BinaryMask& mask, const GeometricParams& g);

/// Photometric ops on the image only, then identical geometric ops on image
/// (bilinear) and mask (nearest). Draws photometric then geometric
/// parameters from rng.
Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng,
               GeometricParams* used = nullptr);

/// HSV helpers on a single pixel; all components in [0, 1].
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// K folds over whole subsets. Without groups, the sorted distinct subset
/// labels are cut into k contiguous runs, larger runs first (10 -> 4, 3, 3).
/// With groups, groups[i] lists the subsets of test fold i.
std::vector<Fold> kfold_split(const std::vector<Sample>& samples, int k = 3,
                              const std::vector<std::vector<std::string>>& groups = {});

}  // namespace mafaseg::data
