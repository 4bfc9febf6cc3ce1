#include "mafaseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mafaseg::geometry {

Angle::Angle(double degrees) {
  if (!std::isfinite(degrees)) throw std::invalid_argument("Angle: non-finite value");
  double d = std::fmod(degrees, 360.0);
  if (d < 0.0) d += 360.0;
  if (d >= 360.0 || d == 0.0) d = 0.0;  // folds -0 and rounding up to 360
  degrees_ = d;
}

double Angle::radians() const { return degrees_ * std::numbers::pi / 180.0; }

bool Angle::is_quarter() const {
  return degrees_ == 0.0 || degrees_ == 90.0 || degrees_ == 180.0 || degrees_ == 270.0;
}

int Angle::quarter_turns() const {
  if (!is_quarter()) {
    throw std::invalid_argument("Angle: " + std::to_string(degrees_) + " is not a quarter turn");
  }
  return static_cast<int>(degrees_ / 90.0);
}

double Angle::sin() const {
  if (is_quarter()) {
    static constexpr double table[] = {0.0, 1.0, 0.0, -1.0};
    return table[quarter_turns()];
  }
  return std::sin(radians());
}

double Angle::cos() const {
  if (is_quarter()) {
    static constexpr double table[] = {1.0, 0.0, -1.0, 0.0};
    return table[quarter_turns()];
  }
  return std::cos(radians());
}

Affine Affine::rotation(int height, int width, Angle angle) {
  const double cy = (height - 1) / 2.0;
  const double cx = (width - 1) / 2.0;
  const double s = angle.sin();
  const double c = angle.cos();
  // Output (r, c) takes its value from the back-rotated source point.
  Affine a;
  a.rr = c;
  a.rc = s;
  a.r0 = cy - c * cy - s * cx;
  a.cr = -s;
  a.cc = c;
  a.c0 = cx + s * cy - c * cx;
  return a;
}

Affine Affine::then(const Affine& inner) const {
  // inner(outer(p)): first map p through *this, then through inner.
  Affine r;
  r.rr = inner.rr * rr + inner.rc * cr;
  r.rc = inner.rr * rc + inner.rc * cc;
  r.r0 = inner.rr * r0 + inner.rc * c0 + inner.r0;
  r.cr = inner.cr * rr + inner.cc * cr;
  r.cc = inner.cr * rc + inner.cc * cc;
  r.c0 = inner.cr * r0 + inner.cc * c0 + inner.c0;
  return r;
}

namespace {

struct Tap {
  int y;
  int x;
  double w;
};

// Up to four in-grid bilinear taps with nonzero weight.
int bilinear_taps(double sy, double sx, int h, int w, Tap taps[4]) {
  const double fy = std::floor(sy);
  const double fx = std::floor(sx);
  const double dy = sy - fy;
  const double dx = sx - fx;
  const int y0 = static_cast<int>(fy);
  const int x0 = static_cast<int>(fx);
  const double wy[2] = {1.0 - dy, dy};
  const double wx[2] = {1.0 - dx, dx};
  int n = 0;
  for (int i = 0; i < 2; ++i) {
    if (wy[i] == 0.0) continue;
    const int y = y0 + i;
    if (y < 0 || y >= h) continue;
    for (int j = 0; j < 2; ++j) {
      if (wx[j] == 0.0) continue;
      const int x = x0 + j;
      if (x < 0 || x >= w) continue;
      taps[n++] = {y, x, wy[i] * wx[j]};
    }
  }
  return n;
}

template <typename T>
void require_finite(const Tensor<T>& map, const char* op) {
  if (!map.all_finite()) throw std::invalid_argument(std::string(op) + ": non-finite input");
}

template <typename T>
Tensor<T> rotate_exact(const Tensor<T>& map, int turns) {
  const int h = map.height();
  const int w = map.width();
  if (h != w) {
    throw std::invalid_argument("rotate: exact-quarter mode needs a square map, got " +
                                map.shape().str());
  }
  Tensor<T> out(map.shape());
  const int c = map.channels();
  for (int n = 0; n < map.batch(); ++n) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        int si = i;
        int sj = j;
        switch (turns) {
          case 1: si = j; sj = w - 1 - i; break;
          case 2: si = h - 1 - i; sj = w - 1 - j; break;
          case 3: si = h - 1 - j; sj = i; break;
          default: break;
        }
        const T* from = &map.at(n, si, sj, 0);
        std::copy(from, from + c, &out.at(n, i, j, 0));
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> warp_bilinear(const Tensor<T>& src, const Affine& m) {
  const int h = src.height();
  const int w = src.width();
  const int c = src.channels();
  Tensor<T> out(src.shape());
  Tap taps[4];
  for (int n = 0; n < src.batch(); ++n) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double sy = m.rr * i + m.rc * j + m.r0;
        const double sx = m.cr * i + m.cc * j + m.c0;
        const int k = bilinear_taps(sy, sx, h, w, taps);
        T* dst = &out.at(n, i, j, 0);
        for (int t = 0; t < k; ++t) {
          const T* s = &src.at(n, taps[t].y, taps[t].x, 0);
          const T wt = static_cast<T>(taps[t].w);
          if (taps[t].w == 1.0) {
            for (int ch = 0; ch < c; ++ch) dst[ch] += s[ch];
          } else {
            for (int ch = 0; ch < c; ++ch) dst[ch] += wt * s[ch];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> warp_bilinear_adjoint(const Tensor<T>& grad_out, const Affine& m) {
  const int h = grad_out.height();
  const int w = grad_out.width();
  const int c = grad_out.channels();
  Tensor<T> grad_in(grad_out.shape());
  Tap taps[4];
  for (int n = 0; n < grad_out.batch(); ++n) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double sy = m.rr * i + m.rc * j + m.r0;
        const double sx = m.cr * i + m.cc * j + m.c0;
        const int k = bilinear_taps(sy, sx, h, w, taps);
        const T* g = &grad_out.at(n, i, j, 0);
        for (int t = 0; t < k; ++t) {
          T* d = &grad_in.at(n, taps[t].y, taps[t].x, 0);
          const T wt = static_cast<T>(taps[t].w);
          for (int ch = 0; ch < c; ++ch) d[ch] += wt * g[ch];
        }
      }
    }
  }
  return grad_in;
}

BinaryMask warp_nearest(const BinaryMask& src, const Affine& m) {
  BinaryMask out(src.height, src.width);
  for (int i = 0; i < src.height; ++i) {
    for (int j = 0; j < src.width; ++j) {
      const double sy = m.rr * i + m.rc * j + m.r0;
      const double sx = m.cr * i + m.cc * j + m.c0;
      const int y = static_cast<int>(std::floor(sy + 0.5));
      const int x = static_cast<int>(std::floor(sx + 0.5));
      if (y >= 0 && y < src.height && x >= 0 && x < src.width) out.at(i, j) = src.at(y, x);
    }
  }
  return out;
}

template <typename T>
Tensor<T> rotate(const Tensor<T>& map, Angle angle, RotationMode mode) {
  require_finite(map, "rotate");
  if (mode == RotationMode::ExactQuarter) {
    return rotate_exact(map, angle.quarter_turns());
  }
  if (angle.degrees() == 0.0) return map;
  return warp_bilinear(map, Affine::rotation(map.height(), map.width(), angle));
}

template <typename T>
Tensor<T> align(const Tensor<T>& map, Angle angle, RotationMode mode) {
  return rotate(map, -angle, mode);
}

template <typename T>
Tensor<T> rotate_adjoint(const Tensor<T>& grad_out, Angle angle, RotationMode mode) {
  if (mode == RotationMode::ExactQuarter) return rotate(grad_out, -angle, mode);
  if (angle.degrees() == 0.0) return grad_out;
  return warp_bilinear_adjoint(grad_out,
                               Affine::rotation(grad_out.height(), grad_out.width(), angle));
}

BinaryMask rotate_mask(const BinaryMask& mask, Angle angle) {
  if (angle.degrees() == 0.0) return mask;
  return warp_nearest(mask, Affine::rotation(mask.height, mask.width, angle));
}

std::vector<Angle> angle_set(int n) {
  if (n < 1) throw std::invalid_argument("angle_set: n must be >= 1");
  std::vector<Angle> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out.emplace_back(360.0 * k / n);
  return out;
}

BinaryMask safe_disc_mask(int height, int width, double margin) {
  if (margin < 0.0) throw std::invalid_argument("safe_disc_mask: margin must be >= 0");
  BinaryMask out(height, width);
  const double cy = (height - 1) / 2.0;
  const double cx = (width - 1) / 2.0;
  const double radius = (std::min(height, width) - 1) / 2.0 - margin;
  if (radius < 0.0) return out;
  const double r2 = radius * radius;
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const double dy = i - cy;
      const double dx = j - cx;
      out.at(i, j) = (dy * dy + dx * dx <= r2) ? 1 : 0;
    }
  }
  return out;
}

#define MAFASEG_INSTANTIATE(T)                                                   \
  template Tensor<T> warp_bilinear(const Tensor<T>&, const Affine&);            \
  template Tensor<T> warp_bilinear_adjoint(const Tensor<T>&, const Affine&);    \
  template Tensor<T> rotate(const Tensor<T>&, Angle, RotationMode);             \
  template Tensor<T> align(const Tensor<T>&, Angle, RotationMode);              \
  template Tensor<T> rotate_adjoint(const Tensor<T>&, Angle, RotationMode);

MAFASEG_INSTANTIATE(float)
MAFASEG_INSTANTIATE(double)
#undef MAFASEG_INSTANTIATE

}  // namespace mafaseg::geometry
