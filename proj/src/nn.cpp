#include "mafaseg/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mafaseg/parallel.hpp"

namespace mafaseg::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  check(t.all_finite(), std::string(op) + ": non-finite input");
}

// Extracts the receptive fields of batch item n into a (P x kh*kw*C) matrix.
template <typename T>
void im2col(const Tensor<T>& x, int n, int kh, int kw, ConvSpec spec, const Padding& pad,
            RowMat<T>& col) {
  const int h = x.height();
  const int w = x.width();
  const int c = x.channels();
  col.setZero(static_cast<Eigen::Index>(pad.out_h) * pad.out_w,
              static_cast<Eigen::Index>(kh) * kw * c);
  for (int oy = 0; oy < pad.out_h; ++oy) {
    for (int ox = 0; ox < pad.out_w; ++ox) {
      T* row = col.data() + (static_cast<std::size_t>(oy) * pad.out_w + ox) * col.cols();
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * spec.stride + ky * spec.dilation - pad.top;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * spec.stride + kx * spec.dilation - pad.left;
          if (ix < 0 || ix >= w) continue;
          const T* src = &x.at(n, iy, ix, 0);
          std::copy(src, src + c, row + (static_cast<std::size_t>(ky) * kw + kx) * c);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMat<T>& col, int n, int kh, int kw, ConvSpec spec, const Padding& pad,
                Tensor<T>& x) {
  const int h = x.height();
  const int w = x.width();
  const int c = x.channels();
  for (int oy = 0; oy < pad.out_h; ++oy) {
    for (int ox = 0; ox < pad.out_w; ++ox) {
      const T* row = col.data() + (static_cast<std::size_t>(oy) * pad.out_w + ox) * col.cols();
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * spec.stride + ky * spec.dilation - pad.top;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * spec.stride + kx * spec.dilation - pad.left;
          if (ix < 0 || ix >= w) continue;
          T* dst = &x.at(n, iy, ix, 0);
          const T* src = row + (static_cast<std::size_t>(ky) * kw + kx) * c;
          for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

bool is_pointwise(int kh, int kw, ConvSpec spec) { return kh == 1 && kw == 1 && spec.stride == 1; }

}  // namespace

Padding same_padding(int h, int w, int kh, int kw, ConvSpec spec) {
  check(spec.stride >= 1 && spec.dilation >= 1, "conv: stride and dilation must be >= 1");
  Padding p{};
  p.out_h = (h + spec.stride - 1) / spec.stride;
  p.out_w = (w + spec.stride - 1) / spec.stride;
  const int eff_h = (kh - 1) * spec.dilation + 1;
  const int eff_w = (kw - 1) * spec.dilation + 1;
  p.top = std::max((p.out_h - 1) * spec.stride + eff_h - h, 0) / 2;
  p.left = std::max((p.out_w - 1) * spec.stride + eff_w - w, 0) / 2;
  return p;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, ConvSpec spec) {
  const Shape& ks = kernel.shape();
  check(ks.w == x.channels(), "conv2d: kernel expects " + std::to_string(ks.w) +
                                  " input channels, got " + std::to_string(x.channels()));
  check_finite(x, "conv2d");
  const int kh = ks.n;
  const int kw = ks.h;
  const int cout = ks.c;
  const Padding pad = same_padding(x.height(), x.width(), kh, kw, spec);
  Tensor<T> out(x.batch(), pad.out_h, pad.out_w, cout);
  ConstMapMat<T> wmat(kernel.data(), static_cast<Eigen::Index>(kh) * kw * ks.w, cout);
  const Eigen::Index pixels = static_cast<Eigen::Index>(pad.out_h) * pad.out_w;
  parallel_for(static_cast<std::size_t>(x.batch()), [&](std::size_t bi) {
    const int n = static_cast<int>(bi);
    MapMat<T> omat(out.item(n).data(), pixels, cout);
    if (is_pointwise(kh, kw, spec)) {
      ConstMapMat<T> xmat(x.item(n).data(), pixels, x.channels());
      omat.noalias() = xmat * wmat;
    } else {
      RowMat<T> col;
      im2col(x, n, kh, kw, spec, pad, col);
      omat.noalias() = col * wmat;
    }
  });
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, ConvSpec spec,
                     const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_kernel) {
  const Shape& ks = kernel.shape();
  const int kh = ks.n;
  const int kw = ks.h;
  const int cin = ks.w;
  const int cout = ks.c;
  const Padding pad = same_padding(x.height(), x.width(), kh, kw, spec);
  check(grad_out.shape() == Shape{x.batch(), pad.out_h, pad.out_w, cout},
        "conv2d_backward: gradient shape mismatch");
  const Eigen::Index krows = static_cast<Eigen::Index>(kh) * kw * cin;
  const Eigen::Index pixels = static_cast<Eigen::Index>(pad.out_h) * pad.out_w;
  ConstMapMat<T> wmat(kernel.data(), krows, cout);
  if (grad_x) *grad_x = Tensor<T>(x.shape());
  std::vector<RowMat<T>> partial(static_cast<std::size_t>(grad_kernel ? x.batch() : 0));
  parallel_for(static_cast<std::size_t>(x.batch()), [&](std::size_t bi) {
    const int n = static_cast<int>(bi);
    ConstMapMat<T> gmat(grad_out.item(n).data(), pixels, cout);
    const bool pw = is_pointwise(kh, kw, spec);
    RowMat<T> col;
    if (grad_kernel) {
      if (pw) {
        ConstMapMat<T> xmat(x.item(n).data(), pixels, cin);
        partial[bi].noalias() = xmat.transpose() * gmat;
      } else {
        im2col(x, n, kh, kw, spec, pad, col);
        partial[bi].noalias() = col.transpose() * gmat;
      }
    }
    if (grad_x) {
      if (pw) {
        MapMat<T> dx(grad_x->item(n).data(), pixels, cin);
        dx.noalias() = gmat * wmat.transpose();
      } else {
        RowMat<T> dcol = gmat * wmat.transpose();
        col2im_add(dcol, n, kh, kw, spec, pad, *grad_x);
      }
    }
  });
  if (grad_kernel) {
    check(grad_kernel->shape() == ks, "conv2d_backward: kernel gradient shape mismatch");
    MapMat<T> gk(grad_kernel->data(), krows, cout);
    for (const auto& p : partial) gk += p;
  }
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, ConvSpec spec) {
  const Shape& ks = kernel.shape();
  check(ks.w == x.channels() && ks.c == 1,
        "depthwise_conv2d: kernel must be (kh, kw, C, 1) with C = input channels");
  check_finite(x, "depthwise_conv2d");
  const int kh = ks.n;
  const int kw = ks.h;
  const int c = x.channels();
  const Padding pad = same_padding(x.height(), x.width(), kh, kw, spec);
  Tensor<T> out(x.batch(), pad.out_h, pad.out_w, c);
  parallel_for(static_cast<std::size_t>(x.batch()), [&](std::size_t bi) {
    const int n = static_cast<int>(bi);
    for (int oy = 0; oy < pad.out_h; ++oy) {
      for (int ox = 0; ox < pad.out_w; ++ox) {
        T* dst = &out.at(n, oy, ox, 0);
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * spec.stride + ky * spec.dilation - pad.top;
          if (iy < 0 || iy >= x.height()) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * spec.stride + kx * spec.dilation - pad.left;
            if (ix < 0 || ix >= x.width()) continue;
            const T* src = &x.at(n, iy, ix, 0);
            const T* k = &kernel.at(ky, kx, 0, 0);
            for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch] * k[ch];
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
void depthwise_conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, ConvSpec spec,
                               const Tensor<T>& grad_out, Tensor<T>* grad_x,
                               Tensor<T>* grad_kernel) {
  const Shape& ks = kernel.shape();
  const int kh = ks.n;
  const int kw = ks.h;
  const int c = x.channels();
  const Padding pad = same_padding(x.height(), x.width(), kh, kw, spec);
  check(grad_out.shape() == Shape{x.batch(), pad.out_h, pad.out_w, c},
        "depthwise_conv2d_backward: gradient shape mismatch");
  if (grad_x) *grad_x = Tensor<T>(x.shape());
  std::vector<Tensor<T>> partial(static_cast<std::size_t>(grad_kernel ? x.batch() : 0));
  parallel_for(static_cast<std::size_t>(x.batch()), [&](std::size_t bi) {
    const int n = static_cast<int>(bi);
    Tensor<T>* gk = nullptr;
    if (grad_kernel) {
      partial[bi] = Tensor<T>(ks);
      gk = &partial[bi];
    }
    for (int oy = 0; oy < pad.out_h; ++oy) {
      for (int ox = 0; ox < pad.out_w; ++ox) {
        const T* g = &grad_out.at(n, oy, ox, 0);
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * spec.stride + ky * spec.dilation - pad.top;
          if (iy < 0 || iy >= x.height()) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * spec.stride + kx * spec.dilation - pad.left;
            if (ix < 0 || ix >= x.width()) continue;
            if (gk) {
              const T* src = &x.at(n, iy, ix, 0);
              T* dk = &gk->at(ky, kx, 0, 0);
              for (int ch = 0; ch < c; ++ch) dk[ch] += src[ch] * g[ch];
            }
            if (grad_x) {
              const T* k = &kernel.at(ky, kx, 0, 0);
              T* dx = &grad_x->at(n, iy, ix, 0);
              for (int ch = 0; ch < c; ++ch) dx[ch] += k[ch] * g[ch];
            }
          }
        }
      }
    }
  });
  if (grad_kernel) {
    check(grad_kernel->shape() == ks, "depthwise_conv2d_backward: kernel gradient shape mismatch");
    for (const auto& p : partial) {
      for (std::size_t i = 0; i < p.size(); ++i) (*grad_kernel)[i] += p[i];
    }
  }
}

template <typename T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& x, const Tensor<T>& depthwise,
                                   const Tensor<T>& pointwise, int stride) {
  check(pointwise.shape().n == 1 && pointwise.shape().h == 1,
        "depthwise_separable_conv: pointwise kernel must be 1x1");
  return conv2d(depthwise_conv2d(x, depthwise, ConvSpec{stride, 1}), pointwise, ConvSpec{});
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const int c = x.channels();
  check(static_cast<int>(bias.size()) == c, "add_bias: channel mismatch");
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.size(); i += static_cast<std::size_t>(c)) {
    for (int ch = 0; ch < c; ++ch) out[i + ch] += bias[ch];
  }
  return out;
}

template <typename T>
void add_bias_backward(const Tensor<T>& grad_out, Tensor<T>* grad_bias) {
  const int c = grad_out.channels();
  check(static_cast<int>(grad_bias->size()) == c, "add_bias_backward: channel mismatch");
  for (std::size_t i = 0; i < grad_out.size(); i += static_cast<std::size_t>(c)) {
    for (int ch = 0; ch < c; ++ch) (*grad_bias)[ch] += grad_out[i + ch];
  }
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                    Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode, T momentum,
                    T epsilon, BatchNormCache<T>* cache) {
  const int c = x.channels();
  check(static_cast<int>(scale.size()) == c && static_cast<int>(shift.size()) == c &&
            static_cast<int>(running_mean.size()) == c && static_cast<int>(running_var.size()) == c,
        "batchnorm: channel mismatch");
  check(epsilon > T(0), "batchnorm: epsilon must be > 0");
  check_finite(x, "batchnorm");
  const std::size_t m = x.size() / static_cast<std::size_t>(c);
  std::vector<T> mean(c, T(0));
  std::vector<T> var(c, T(0));
  if (mode == Mode::Train) {
    // Accumulate in double so float training sees stable statistics.
    std::vector<double> s(c, 0.0);
    for (std::size_t i = 0; i < x.size(); i += static_cast<std::size_t>(c)) {
      for (int ch = 0; ch < c; ++ch) s[ch] += x[i + ch];
    }
    std::vector<double> dmean(c);
    for (int ch = 0; ch < c; ++ch) dmean[ch] = s[ch] / static_cast<double>(m);
    std::vector<double> sq(c, 0.0);
    for (std::size_t i = 0; i < x.size(); i += static_cast<std::size_t>(c)) {
      for (int ch = 0; ch < c; ++ch) {
        const double d = x[i + ch] - dmean[ch];
        sq[ch] += d * d;
      }
    }
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = static_cast<T>(dmean[ch]);
      var[ch] = static_cast<T>(sq[ch] / static_cast<double>(m));
      running_mean[ch] = momentum * running_mean[ch] + (T(1) - momentum) * mean[ch];
      running_var[ch] = momentum * running_var[ch] + (T(1) - momentum) * var[ch];
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      var[ch] = running_var[ch];
    }
  }
  std::vector<T> inv_std(c);
  for (int ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + epsilon);
  Tensor<T> out(x.shape());
  Tensor<T> normalized(x.shape());
  for (std::size_t i = 0; i < x.size(); i += static_cast<std::size_t>(c)) {
    for (int ch = 0; ch < c; ++ch) {
      const T xh = (x[i + ch] - mean[ch]) * inv_std[ch];
      normalized[i + ch] = xh;
      out[i + ch] = scale[ch] * xh + shift[ch];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& scale,
                             const Tensor<T>& grad_out, Tensor<T>* grad_scale,
                             Tensor<T>* grad_shift) {
  const Tensor<T>& xh = cache.normalized;
  check(xh.shape() == grad_out.shape(), "batchnorm_backward: shape mismatch");
  const int c = grad_out.channels();
  const std::size_t m = grad_out.size() / static_cast<std::size_t>(c);
  std::vector<double> sum_g(c, 0.0);
  std::vector<double> sum_gx(c, 0.0);
  for (std::size_t i = 0; i < grad_out.size(); i += static_cast<std::size_t>(c)) {
    for (int ch = 0; ch < c; ++ch) {
      sum_g[ch] += grad_out[i + ch];
      sum_gx[ch] += static_cast<double>(grad_out[i + ch]) * xh[i + ch];
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    if (grad_scale) (*grad_scale)[ch] += static_cast<T>(sum_gx[ch]);
    if (grad_shift) (*grad_shift)[ch] += static_cast<T>(sum_g[ch]);
  }
  Tensor<T> dx(grad_out.shape());
  if (cache.mode == Mode::Infer) {
    for (std::size_t i = 0; i < dx.size(); i += static_cast<std::size_t>(c)) {
      for (int ch = 0; ch < c; ++ch) dx[i + ch] = grad_out[i + ch] * scale[ch] * cache.inv_std[ch];
    }
    return dx;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < dx.size(); i += static_cast<std::size_t>(c)) {
    for (int ch = 0; ch < c; ++ch) {
      // dx = scale * inv_std * (g - mean(g) - xh * mean(g * xh))
      const double v = grad_out[i + ch] - sum_g[ch] * inv_m - xh[i + ch] * sum_gx[ch] * inv_m;
      dx[i + ch] = static_cast<T>(v * scale[ch] * cache.inv_std[ch]);
    }
  }
  return dx;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  check(output.shape() == grad_out.shape(), "relu_backward: shape mismatch");
  Tensor<T> dx(output.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = output[i] > T(0) ? grad_out[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> softmax_pair(const Tensor<T>& logits, int first) {
  const int c = logits.channels();
  check(first >= 0 && first + 1 < c, "softmax_pair: channel pair out of range");
  Tensor<T> out = logits;
  for (std::size_t i = 0; i < out.size(); i += static_cast<std::size_t>(c)) {
    const T a = logits[i + first];
    const T b = logits[i + first + 1];
    // p1 = sigmoid(b - a), computed on the stable side.
    const T d = b - a;
    T p1;
    if (d >= T(0)) {
      const T e = std::exp(-d);
      p1 = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(d);
      p1 = e / (T(1) + e);
    }
    out[i + first] = T(1) - p1;
    out[i + first + 1] = p1;
  }
  return out;
}

template <typename T>
Tensor<T> softmax_pair_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs, int first) {
  check(probs.shape() == grad_probs.shape(), "softmax_pair_backward: shape mismatch");
  const int c = probs.channels();
  check(first >= 0 && first + 1 < c, "softmax_pair_backward: channel pair out of range");
  Tensor<T> dz = grad_probs;
  for (std::size_t i = 0; i < dz.size(); i += static_cast<std::size_t>(c)) {
    const T p0 = probs[i + first];
    const T p1 = probs[i + first + 1];
    const T g0 = grad_probs[i + first];
    const T g1 = grad_probs[i + first + 1];
    const T dot = p0 * g0 + p1 * g1;
    dz[i + first] = p0 * (g0 - dot);
    dz[i + first + 1] = p1 * (g1 - dot);
  }
  return dz;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
  check(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be >= 1");
  const int h = x.height();
  const int w = x.width();
  const int c = x.channels();
  Tensor<T> out(x.batch(), out_h, out_w, c);
  for (int n = 0; n < x.batch(); ++n) {
    for (int i = 0; i < out_h; ++i) {
      const double fy = out_h > 1 ? static_cast<double>(i) * (h - 1) / (out_h - 1) : 0.0;
      const int y0 = std::min(static_cast<int>(fy), h - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const T wy = static_cast<T>(fy - y0);
      for (int j = 0; j < out_w; ++j) {
        const double fx = out_w > 1 ? static_cast<double>(j) * (w - 1) / (out_w - 1) : 0.0;
        const int x0 = std::min(static_cast<int>(fx), w - 1);
        const int x1 = std::min(x0 + 1, w - 1);
        const T wx = static_cast<T>(fx - x0);
        const T* a = &x.at(n, y0, x0, 0);
        const T* b = &x.at(n, y0, x1, 0);
        const T* cc = &x.at(n, y1, x0, 0);
        const T* d = &x.at(n, y1, x1, 0);
        T* o = &out.at(n, i, j, 0);
        if (wy == T(0) && wx == T(0)) {
          std::copy(a, a + c, o);
          continue;
        }
        const T w00 = (T(1) - wy) * (T(1) - wx);
        const T w01 = (T(1) - wy) * wx;
        const T w10 = wy * (T(1) - wx);
        const T w11 = wy * wx;
        for (int ch = 0; ch < c; ++ch) {
          o[ch] = w00 * a[ch] + w01 * b[ch] + w10 * cc[ch] + w11 * d[ch];
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad_out, int in_h, int in_w) {
  const int out_h = grad_out.height();
  const int out_w = grad_out.width();
  const int c = grad_out.channels();
  Tensor<T> dx(grad_out.batch(), in_h, in_w, c);
  for (int n = 0; n < grad_out.batch(); ++n) {
    for (int i = 0; i < out_h; ++i) {
      const double fy = out_h > 1 ? static_cast<double>(i) * (in_h - 1) / (out_h - 1) : 0.0;
      const int y0 = std::min(static_cast<int>(fy), in_h - 1);
      const int y1 = std::min(y0 + 1, in_h - 1);
      const T wy = static_cast<T>(fy - y0);
      for (int j = 0; j < out_w; ++j) {
        const double fx = out_w > 1 ? static_cast<double>(j) * (in_w - 1) / (out_w - 1) : 0.0;
        const int x0 = std::min(static_cast<int>(fx), in_w - 1);
        const int x1 = std::min(x0 + 1, in_w - 1);
        const T wx = static_cast<T>(fx - x0);
        const T* g = &grad_out.at(n, i, j, 0);
        const T w00 = (T(1) - wy) * (T(1) - wx);
        const T w01 = (T(1) - wy) * wx;
        const T w10 = wy * (T(1) - wx);
        const T w11 = wy * wx;
        T* a = &dx.at(n, y0, x0, 0);
        T* b = &dx.at(n, y0, x1, 0);
        T* cc = &dx.at(n, y1, x0, 0);
        T* d = &dx.at(n, y1, x1, 0);
        for (int ch = 0; ch < c; ++ch) {
          a[ch] += w00 * g[ch];
          b[ch] += w01 * g[ch];
          cc[ch] += w10 * g[ch];
          d[ch] += w11 * g[ch];
        }
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& x, int factor) {
  check(factor >= 1, "upsample: factor must be >= 1");
  if (factor == 1) return x;
  return bilinear_resize(x, x.height() * factor, x.width() * factor);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double keep_rate, Rng& rng, Mode mode, Tensor<T>* mask) {
  check(keep_rate > 0.0 && keep_rate <= 1.0, "dropout: keep_rate must be in (0, 1]");
  if (mode == Mode::Infer || keep_rate == 1.0) {
    if (mask) *mask = Tensor<T>(x.shape(), T(1));
    return x;
  }
  const T scale = static_cast<T>(1.0 / keep_rate);
  Tensor<T> m(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = rng.uniform() < keep_rate ? scale : T(0);
    out[i] = x[i] * m[i];
  }
  if (mask) *mask = std::move(m);
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const int c = x.channels();
  Tensor<T> out(x.batch(), 1, 1, c);
  const double inv = 1.0 / (static_cast<double>(x.height()) * x.width());
  for (int n = 0; n < x.batch(); ++n) {
    std::vector<double> s(c, 0.0);
    auto item = x.item(n);
    for (std::size_t i = 0; i < item.size(); i += static_cast<std::size_t>(c)) {
      for (int ch = 0; ch < c; ++ch) s[ch] += item[i + ch];
    }
    for (int ch = 0; ch < c; ++ch) out.at(n, 0, 0, ch) = static_cast<T>(s[ch] * inv);
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, int h, int w) {
  const int c = grad_out.channels();
  Tensor<T> dx(grad_out.batch(), h, w, c);
  const T inv = static_cast<T>(1.0 / (static_cast<double>(h) * w));
  for (int n = 0; n < grad_out.batch(); ++n) {
    auto item = dx.item(n);
    for (std::size_t i = 0; i < item.size(); i += static_cast<std::size_t>(c)) {
      for (int ch = 0; ch < c; ++ch) item[i + ch] = grad_out.at(n, 0, 0, ch) * inv;
    }
  }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.batch() == b.batch() && a.height() == b.height() && a.width() == b.width(),
        "concat_channels: spatial shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  const int ca = a.channels();
  const int cb = b.channels();
  Tensor<T> out(a.batch(), a.height(), a.width(), ca + cb);
  const std::size_t pixels = a.size() / static_cast<std::size_t>(ca);
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(a.data() + p * ca, ca, out.data() + p * (ca + cb));
    std::copy_n(b.data() + p * cb, cb, out.data() + p * (ca + cb) + ca);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first) {
  const int c = x.channels();
  check(first >= 1 && first < c, "split_channels: split point out of range");
  Tensor<T> a(x.batch(), x.height(), x.width(), first);
  Tensor<T> b(x.batch(), x.height(), x.width(), c - first);
  const std::size_t pixels = x.size() / static_cast<std::size_t>(c);
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(x.data() + p * c, first, a.data() + p * first);
    std::copy_n(x.data() + p * c + first, c - first, b.data() + p * (c - first));
  }
  return {std::move(a), std::move(b)};
}

#define MAFASEG_INSTANTIATE(T)                                                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, ConvSpec);                    \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, ConvSpec, const Tensor<T>&, \
                                Tensor<T>*, Tensor<T>*);                                       \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, ConvSpec);          \
  template void depthwise_conv2d_backward(const Tensor<T>&, const Tensor<T>&, ConvSpec,        \
                                          const Tensor<T>&, Tensor<T>*, Tensor<T>*);           \
  template Tensor<T> depthwise_separable_conv(const Tensor<T>&, const Tensor<T>&,              \
                                              const Tensor<T>&, int);                          \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                            \
  template void add_bias_backward(const Tensor<T>&, Tensor<T>*);                               \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                               Tensor<T>&, Tensor<T>&, Mode, T, T, BatchNormCache<T>*);        \
  template Tensor<T> batchnorm_backward(const BatchNormCache<T>&, const Tensor<T>&,            \
                                        const Tensor<T>&, Tensor<T>*, Tensor<T>*);             \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> softmax_pair(const Tensor<T>&, int);                                      \
  template Tensor<T> softmax_pair_backward(const Tensor<T>&, const Tensor<T>&, int);           \
  template Tensor<T> bilinear_resize(const Tensor<T>&, int, int);                              \
  template Tensor<T> bilinear_resize_backward(const Tensor<T>&, int, int);                     \
  template Tensor<T> upsample(const Tensor<T>&, int);                                          \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, Mode, Tensor<T>*);                \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                        \
  template Tensor<T> global_avg_pool_backward(const Tensor<T>&, int, int);                     \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                      \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);

MAFASEG_INSTANTIATE(float)
MAFASEG_INSTANTIATE(double)
#undef MAFASEG_INSTANTIATE

}  // namespace mafaseg::nn
