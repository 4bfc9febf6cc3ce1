#include "mafaseg/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>

#include "mafaseg/parallel.hpp"

namespace mafaseg::data {

namespace fs = std::filesystem;

std::string to_string(Difficulty d) {
  return d == Difficulty::HighContrast ? "high-contrast" : "low-contrast";
}

Difficulty parse_difficulty(const std::string& s) {
  if (s == "high-contrast" || s == "high") return Difficulty::HighContrast;
  if (s == "low-contrast" || s == "low") return Difficulty::LowContrast;
  throw std::invalid_argument("unknown difficulty '" + s + "' (expected high-contrast or low-contrast)");
}

bool Capsule::contains(double y, double x) const {
  const double dy = by - ay;
  const double dx = bx - ax;
  const double len2 = dy * dy + dx * dx;
  double t = len2 > 0.0 ? ((y - ay) * dy + (x - ax) * dx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double py = ay + t * dy - y;
  const double px = ax + t * dx - x;
  return py * py + px * px <= radius * radius;
}

namespace {

double smoothstep(double e0, double e1, double v) {
  const double t = std::clamp((v - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Low-frequency colour noise: a coarse normal grid, bilinearly interpolated.
std::vector<double> coarse_noise(Rng& rng, int size, int grid, double amplitude) {
  std::vector<double> g(static_cast<std::size_t>(grid) * grid * 3);
  for (double& v : g) v = rng.normal() * amplitude;
  std::vector<double> out(static_cast<std::size_t>(size) * size * 3);
  const double step = static_cast<double>(grid - 1) / std::max(1, size - 1);
  for (int y = 0; y < size; ++y) {
    const double fy = y * step;
    const int y0 = std::min(static_cast<int>(fy), grid - 2);
    const double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = x * step;
      const int x0 = std::min(static_cast<int>(fx), grid - 2);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int yy, int xx) { return g[(static_cast<std::size_t>(yy) * grid + xx) * 3 + c]; };
        out[(static_cast<std::size_t>(y) * size + x) * 3 + c] =
            (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
            wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
      }
    }
  }
  return out;
}

}  // namespace

Sample generate_scene(std::uint64_t seed, int index, const SynthOptions& opts,
                      std::optional<Capsule>* capsule_out) {
  const int size = opts.size;
  if (size < 8) throw std::invalid_argument("generate_scene: size must be >= 8");
  Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(index));

  const double tissue[3] = {rng.uniform(0.55, 0.8), rng.uniform(0.25, 0.4), rng.uniform(0.2, 0.35)};
  const auto low = coarse_noise(rng, size, 6, 0.08);

  std::optional<Capsule> capsule;
  if (!rng.bernoulli(opts.empty_fraction)) {
    for (int attempt = 0; attempt < 16 && !capsule; ++attempt) {
      Capsule c;
      c.radius = rng.uniform(0.05, 0.10) * size;
      const double rho = 0.3 * size * std::sqrt(rng.uniform());
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double centre = (size - 1) / 2.0;
      c.by = centre + rho * std::sin(phi);
      c.bx = centre + rho * std::cos(phi);
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      c.ay = c.by + 2.0 * size * std::sin(theta);
      c.ax = c.bx + 2.0 * size * std::cos(theta);
      std::size_t inside = 0;
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) inside += c.contains(y, x);
      }
      if (inside <= 0.4 * size * size) capsule = c;
    }
  }
  const double metal = rng.uniform(0.55, 0.8);
  const double tint = rng.uniform(0.0, 0.08);

  Sample s;
  s.image = RasterMap(1, size, size, 3);
  s.mask = BinaryMask(size, size);
  const double centre = (size - 1) / 2.0;
  const double half = size / 2.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * size + x;
      double rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = tissue[c] + low[p * 3 + c] + 0.02 * rng.normal();
      if (capsule && capsule->contains(y, x)) {
        s.mask.at(y, x) = 1;
        const Capsule& k = *capsule;
        const double len = std::hypot(k.ay - k.by, k.ax - k.bx);
        const double uy = (k.ay - k.by) / len;
        const double ux = (k.ax - k.bx) / len;
        const double along = (y - k.by) * uy + (x - k.bx) * ux;
        const double across = (y - k.by) * ux - (x - k.bx) * uy;
        const double shade = 0.75 + 0.35 * std::exp(-2.0 * std::max(along, 0.0) / size);
        const double spec = 0.15 * std::exp(-std::pow(across / (0.35 * k.radius), 2.0));
        double inst[3] = {metal * shade + spec, metal * shade + spec,
                          (metal + tint) * shade + spec};
        double mix = 0.0;
        if (opts.difficulty == Difficulty::LowContrast) {
          const double tip_dist = std::hypot(y - k.by, x - k.bx);
          mix = 0.8 * std::exp(-tip_dist / (0.25 * size));
        }
        for (int c = 0; c < 3; ++c) {
          rgb[c] = (1.0 - mix) * (inst[c] + 0.015 * rng.normal()) + mix * rgb[c];
        }
      }
      const double r = std::hypot(y - centre, x - centre) / half;
      const double vignette = (1.0 - 0.35 * r * r) * (1.0 - smoothstep(0.95, 1.1, r));
      for (int c = 0; c < 3; ++c) {
        s.image.at(0, y, x, c) = static_cast<float>(std::clamp(rgb[c] * vignette, 0.0, 1.0));
      }
    }
  }
  char id[32];
  std::snprintf(id, sizeof id, "syn_%05d", index);
  s.id = id;
  if (capsule_out) *capsule_out = capsule;
  return s;
}

std::vector<Sample> generate_synthetic(std::uint64_t seed, int count, const SynthOptions& opts) {
  if (count < 1) throw std::invalid_argument("generate_synthetic: count must be >= 1");
  if (opts.subsets < 1) throw std::invalid_argument("generate_synthetic: subsets must be >= 1");
  std::vector<Sample> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), [&](std::size_t i) {
    out[i] = generate_scene(seed, static_cast<int>(i), opts);
    const long long group = static_cast<long long>(i) * opts.subsets / count;
    char name[32];
    std::snprintf(name, sizeof name, "subset%02lld", group + 1);
    out[i].subset = name;
  });
  return out;
}

namespace {

void write_png(const fs::path& path, int height, int width, png_uint_32 format,
               const std::vector<png_byte>& buf) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

std::vector<png_byte> read_png(const fs::path& path, png_uint_32 format, int& height, int& width) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
  }
  height = static_cast<int>(img.height);
  width = static_cast<int>(img.width);
  return buf;
}

png_byte to_byte(double v) {
  return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png_rgb(const fs::path& path, const RasterMap& image) {
  if (image.channels() != 3 || image.batch() != 1) {
    throw std::invalid_argument("write_png_rgb: expected a (1, H, W, 3) image");
  }
  std::vector<png_byte> buf(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) buf[i] = to_byte(image[i]);
  write_png(path, image.height(), image.width(), PNG_FORMAT_RGB, buf);
}

void write_png_mask(const fs::path& path, const BinaryMask& mask) {
  std::vector<png_byte> buf(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) buf[i] = mask.bits[i] ? 255 : 0;
  write_png(path, mask.height, mask.width, PNG_FORMAT_GRAY, buf);
}

RasterMap read_png_rgb(const fs::path& path) {
  int h = 0;
  int w = 0;
  const auto buf = read_png(path, PNG_FORMAT_RGB, h, w);
  RasterMap out(1, h, w, 3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(buf[i] / 255.0);
  return out;
}

BinaryMask read_png_mask(const fs::path& path) {
  int h = 0;
  int w = 0;
  const auto buf = read_png(path, PNG_FORMAT_GRAY, h, w);
  BinaryMask out(h, w);
  for (std::size_t i = 0; i < out.size(); ++i) out.bits[i] = buf[i] >= 128 ? 1 : 0;
  return out;
}

void save_dataset(const fs::path& root, const std::vector<Sample>& samples) {
  for (const auto& s : samples) {
    const fs::path dir = s.subset.empty() ? root : root / s.subset;
    write_png_rgb(dir / "images" / (s.id + ".png"), s.image);
    write_png_mask(dir / "masks" / (s.id + ".png"), s.mask);
  }
}

namespace {

void load_subset(const fs::path& dir, std::vector<Sample>& out) {
  const fs::path images = dir / "images";
  const fs::path masks = dir / "masks";
  if (!fs::is_directory(masks)) {
    throw std::runtime_error("missing masks directory " + masks.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const fs::path m = masks / f.filename();
    if (!fs::exists(m)) throw std::runtime_error("missing mask for " + f.string() + ": " + m.string());
    Sample s;
    s.image = read_png_rgb(f);
    s.mask = read_png_mask(m);
    if (s.mask.height != s.image.height() || s.mask.width != s.image.width()) {
      throw std::runtime_error("size mismatch between " + f.string() + " and " + m.string());
    }
    s.id = f.stem().string();
    s.subset = fs::absolute(dir).lexically_normal().filename().string();
    if (s.subset.empty()) s.subset = fs::absolute(dir).parent_path().filename().string();
    out.push_back(std::move(s));
  }
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory not found: " + root.string());
  std::vector<Sample> out;
  if (fs::is_directory(root / "images")) {
    load_subset(root, out);
  } else {
    std::vector<fs::path> subsets;
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory() && fs::is_directory(e.path() / "images")) subsets.push_back(e.path());
    }
    std::sort(subsets.begin(), subsets.end());
    for (const auto& d : subsets) load_subset(d, out);
  }
  if (out.empty()) std::cerr << "warning: no samples found under " << root.string() << "\n";
  return out;
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.hue = c.brightness = c.saturation = c.contrast = false;
  c.flip_lr = c.flip_ud = c.rotation = c.zoom_in = c.zoom_out = false;
  return c;
}

void AugmentConfig::validate() const {
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("augment: ") + msg);
  };
  need(hue_range >= 0.0 && hue_range <= 0.5, "hue_range must be in [0, 0.5]");
  need(brightness_range >= 0.0 && brightness_range <= 1.0, "brightness_range must be in [0, 1]");
  need(saturation_min > 0.0 && saturation_min <= saturation_max, "bad saturation range");
  need(contrast_min > 0.0 && contrast_min <= contrast_max, "bad contrast range");
  need(zoom_in_max >= 1.0, "zoom_in_max must be >= 1");
  need(zoom_out_min > 0.0 && zoom_out_min <= 1.0, "zoom_out_min must be in (0, 1]");
}

bool GeometricParams::identity() const {
  return !flip_lr && !flip_ud && geometry::Angle(rotation_deg).degrees() == 0.0 && scale == 1.0;
}

geometry::Affine GeometricParams::source_map(int height, int width) const {
  const double cy = (height - 1) / 2.0;
  const double cx = (width - 1) / 2.0;
  geometry::Affine zoom;
  zoom.rr = zoom.cc = 1.0 / scale;
  zoom.r0 = cy + offset_y - cy / scale;
  zoom.c0 = cx + offset_x - cx / scale;
  geometry::Affine flip;
  if (flip_ud) {
    flip.rr = -1.0;
    flip.r0 = height - 1.0;
  }
  if (flip_lr) {
    flip.cc = -1.0;
    flip.c0 = width - 1.0;
  }
  const auto rot = geometry::Affine::rotation(height, width, geometry::Angle(rotation_deg));
  return zoom.then(rot).then(flip);
}

PhotometricParams sample_photometric(const AugmentConfig& cfg, Rng& rng) {
  PhotometricParams p;
  if (cfg.hue) p.hue_shift = rng.uniform(-cfg.hue_range, cfg.hue_range);
  if (cfg.saturation) p.saturation_scale = rng.uniform(cfg.saturation_min, cfg.saturation_max);
  if (cfg.brightness) p.brightness_shift = rng.uniform(-cfg.brightness_range, cfg.brightness_range);
  if (cfg.contrast) p.contrast_scale = rng.uniform(cfg.contrast_min, cfg.contrast_max);
  return p;
}

GeometricParams sample_geometric(const AugmentConfig& cfg, Rng& rng, int height, int width) {
  GeometricParams g;
  if (cfg.flip_lr) g.flip_lr = rng.bernoulli(0.5);
  if (cfg.flip_ud) g.flip_ud = rng.bernoulli(0.5);
  if (cfg.rotation) g.rotation_deg = rng.uniform(0.0, 360.0);
  bool zoom_in = cfg.zoom_in;
  bool zoom_out = cfg.zoom_out;
  if (zoom_in && zoom_out) {
    zoom_in = rng.bernoulli(0.5);
    zoom_out = !zoom_in;
  }
  if (zoom_in) {
    g.scale = rng.uniform(1.0, cfg.zoom_in_max);
    // The zoomed window stays inside the grid.
    const double my = (height - 1) / (2.0 * g.scale);
    const double mx = (width - 1) / (2.0 * g.scale);
    g.offset_y = rng.uniform(my, (height - 1) - my) - (height - 1) / 2.0;
    g.offset_x = rng.uniform(mx, (width - 1) - mx) - (width - 1) / 2.0;
  } else if (zoom_out) {
    g.scale = rng.uniform(cfg.zoom_out_min, 1.0);
  }
  return g;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0 + (b - r) / d;
  } else {
    h = 4.0 + (r - g) / d;
  }
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

RasterMap apply_photometric(const RasterMap& image, const PhotometricParams& p) {
  if (image.channels() != 3) throw std::invalid_argument("apply_photometric: expected RGB");
  RasterMap out = image;
  const std::size_t pixels = image.size() / 3;
  if (p.hue_shift != 0.0 || p.saturation_scale != 1.0) {
    for (std::size_t i = 0; i < pixels; ++i) {
      double h, s, v, r, g, b;
      rgb_to_hsv(out[3 * i], out[3 * i + 1], out[3 * i + 2], h, s, v);
      h += p.hue_shift;
      s = std::clamp(s * p.saturation_scale, 0.0, 1.0);
      hsv_to_rgb(h, s, v, r, g, b);
      out[3 * i] = static_cast<float>(r);
      out[3 * i + 1] = static_cast<float>(g);
      out[3 * i + 2] = static_cast<float>(b);
    }
  }
  if (p.brightness_shift != 0.0 || p.contrast_scale != 1.0) {
    double mean = 0.0;
    for (float v : out.values()) mean += v;
    mean /= static_cast<double>(out.size());
    for (auto& v : out.values()) {
      v = static_cast<float>((v - mean) * p.contrast_scale + mean + p.brightness_shift);
    }
  }
  for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

RasterMap apply_geometric(const RasterMap& image, const GeometricParams& g) {
  if (g.identity()) return image;
  RasterMap out = geometry::warp_bilinear(image, g.source_map(image.height(), image.width()));
  for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

BinaryMask apply_geometric(const BinaryMask& mask, const GeometricParams& g) {
  if (g.identity()) return mask;
  return geometry::warp_nearest(mask, g.source_map(mask.height, mask.width));
}

Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng, GeometricParams* used) {
  const PhotometricParams p = sample_photometric(cfg, rng);
  const GeometricParams g = sample_geometric(cfg, rng, sample.image.height(), sample.image.width());
  Sample out;
  out.id = sample.id;
  out.subset = sample.subset;
  out.image = apply_geometric(apply_photometric(sample.image, p), g);
  out.mask = apply_geometric(sample.mask, g);
  if (used) *used = g;
  return out;
}

std::vector<Fold> kfold_split(const std::vector<Sample>& samples, int k,
                              const std::vector<std::vector<std::string>>& groups) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  std::set<std::string> labels;
  for (const auto& s : samples) labels.insert(s.subset);
  if (static_cast<int>(labels.size()) < k) {
    throw std::invalid_argument("kfold_split: " + std::to_string(labels.size()) +
                                " subsets cannot form " + std::to_string(k) + " folds");
  }
  std::map<std::string, int> fold_of;
  if (!groups.empty()) {
    if (static_cast<int>(groups.size()) != k) {
      throw std::invalid_argument("kfold_split: expected " + std::to_string(k) + " groups");
    }
    for (int f = 0; f < k; ++f) {
      for (const auto& name : groups[f]) {
        if (!labels.count(name)) throw std::invalid_argument("kfold_split: unknown subset " + name);
        if (!fold_of.emplace(name, f).second) {
          throw std::invalid_argument("kfold_split: subset " + name + " in two groups");
        }
      }
    }
    for (const auto& l : labels) {
      if (!fold_of.count(l)) throw std::invalid_argument("kfold_split: subset " + l + " in no group");
    }
  } else {
    const int n = static_cast<int>(labels.size());
    int f = 0;
    int used = 0;
    for (const auto& l : labels) {
      const int quota = n / k + (f < n % k ? 1 : 0);
      fold_of[l] = f;
      if (++used == quota) {
        ++f;
        used = 0;
      }
    }
  }
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int f = fold_of.at(samples[i].subset);
    for (int j = 0; j < k; ++j) (j == f ? folds[j].test : folds[j].train).push_back(i);
  }
  return folds;
}

}  // namespace mafaseg::data
