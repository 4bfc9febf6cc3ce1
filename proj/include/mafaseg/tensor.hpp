#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mafaseg {

/// Dense 4-D shape in (batch, height, width, channels) order.
struct Shape {
  int n = 0;
  int h = 0;
  int w = 0;
  int c = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * h * w * c;
  }
  bool valid() const { return n >= 1 && h >= 1 && w >= 1 && c >= 1; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Channels-last (NHWC) tensor. A single image or feature map is a tensor
/// with batch 1; the geometry and aggregation routines treat every batch
/// item independently.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(shape) {
    if (!shape.valid()) {
      throw std::invalid_argument("Tensor: all dimensions must be >= 1, got " + shape.str());
    }
    values_.assign(shape.count(), fill);
  }
  Tensor(int n, int h, int w, int c, T fill = T{}) : Tensor(Shape{n, h, w, c}, fill) {}

  const Shape& shape() const { return shape_; }
  int batch() const { return shape_.n; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }
  int channels() const { return shape_.c; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t index(int n, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(n) * shape_.h + y) * shape_.w + x) * shape_.c + ch;
  }
  T& at(int n, int y, int x, int ch) { return values_[index(n, y, x, ch)]; }
  const T& at(int n, int y, int x, int ch) const { return values_[index(n, y, x, ch)]; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }

  /// Elements of one batch item, row-major (y, x, c).
  std::span<T> item(int n) {
    const std::size_t per = static_cast<std::size_t>(shape_.h) * shape_.w * shape_.c;
    return {values_.data() + per * n, per};
  }
  std::span<const T> item(int n) const {
    const std::size_t per = static_cast<std::size_t>(shape_.h) * shape_.w * shape_.c;
    return {values_.data() + per * n, per};
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const {
    for (T v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_{};
  std::vector<T> values_;
};

/// Copies batch item `n` of `src` into a new batch-1 tensor.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& src, int n) {
  Tensor<T> out(1, src.height(), src.width(), src.channels());
  auto from = src.item(n);
  std::copy(from.begin(), from.end(), out.values().begin());
  return out;
}

/// Copies batch items [start, start + count) into a new tensor.
template <typename T>
Tensor<T> slice_items(const Tensor<T>& src, int start, int count) {
  if (start < 0 || count < 1 || start + count > src.batch()) {
    throw std::out_of_range("slice_items: range outside batch");
  }
  Tensor<T> out(count, src.height(), src.width(), src.channels());
  const std::size_t per = src.size() / static_cast<std::size_t>(src.batch());
  std::copy_n(src.data() + per * static_cast<std::size_t>(start), per * count, out.data());
  return out;
}

/// Concatenates tensors of identical (h, w, c) along the batch axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("stack_batch: no tensors");
  Shape s = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.h != s.h || ps.w != s.w || ps.c != s.c) {
      throw std::invalid_argument("stack_batch: shape mismatch " + ps.str() + " vs " + s.str());
    }
    total += ps.n;
  }
  s.n = total;
  Tensor<T> out(s);
  auto dst = out.values().begin();
  for (const auto& p : parts) dst = std::copy(p.values().begin(), p.values().end(), dst);
  return out;
}

template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& src) {
  Tensor<U> out(src.shape());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<U>(src[i]);
  return out;
}

/// H x W grid of {0,1}.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return bits.size(); }
  std::size_t count() const;
  bool same_shape(const BinaryMask& o) const { return height == o.height && width == o.width; }
  bool operator==(const BinaryMask&) const = default;
};

/// Single image / feature map carrier (batch 1 by convention).
using RasterMap = Tensor<float>;

}  // namespace mafaseg
