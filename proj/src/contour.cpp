#include "mafaseg/contour.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mafaseg::contour {

BinaryMask contour_band(const BinaryMask& mask, int width) {
  if (width < 1) throw std::invalid_argument("contour_band: width must be >= 1");
  const int h = mask.height;
  const int w = mask.width;
  // Two-pass city-block distance transform seeded with the distance to the
  // virtual background ring just outside the grid.
  std::vector<int> dist(mask.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      dist[static_cast<std::size_t>(y) * w + x] =
          mask.at(y, x) ? std::min({y + 1, x + 1, h - y, w - x}) : 0;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int& d = dist[static_cast<std::size_t>(y) * w + x];
      if (y > 0) d = std::min(d, dist[static_cast<std::size_t>(y - 1) * w + x] + 1);
      if (x > 0) d = std::min(d, dist[static_cast<std::size_t>(y) * w + x - 1] + 1);
    }
  }
  for (int y = h - 1; y >= 0; --y) {
    for (int x = w - 1; x >= 0; --x) {
      int& d = dist[static_cast<std::size_t>(y) * w + x];
      if (y + 1 < h) d = std::min(d, dist[static_cast<std::size_t>(y + 1) * w + x] + 1);
      if (x + 1 < w) d = std::min(d, dist[static_cast<std::size_t>(y) * w + x + 1] + 1);
    }
  }
  BinaryMask band(h, w);
  for (std::size_t i = 0; i < band.size(); ++i) {
    band.bits[i] = (mask.bits[i] && dist[i] <= width) ? 1 : 0;
  }
  return band;
}

template <typename T>
Tensor<T> one_hot(const BinaryMask& mask) {
  Tensor<T> out(1, mask.height, mask.width, 2);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const bool fg = mask.bits[i] != 0;
    out[2 * i] = fg ? T(0) : T(1);
    out[2 * i + 1] = fg ? T(1) : T(0);
  }
  return out;
}

template <typename T>
Tensor<T> extract_contour_gt(const BinaryMask& mask, int width) {
  return one_hot<T>(contour_band(mask, width));
}

namespace {

template <typename T>
void check_pair(const Tensor<T>& pred, const Tensor<T>& gt, const char* op) {
  if (!(pred.shape() == gt.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + pred.shape().str() +
                                " vs " + gt.shape().str());
  }
  if (pred.channels() != 2) throw std::invalid_argument(std::string(op) + ": expected 2 channels");
}

}  // namespace

template <typename T>
LossResult<T> dice_contour_loss(const Tensor<T>& pred, const Tensor<T>& gt, double tau) {
  check_pair(pred, gt, "dice_contour_loss");
  LossResult<T> r;
  r.grad = Tensor<T>(pred.shape());
  const int batch = pred.batch();
  double total = 0.0;
  for (int n = 0; n < batch; ++n) {
    auto p = pred.item(n);
    auto g = gt.item(n);
    double inter = 0.0;
    double p2 = 0.0;
    double g2 = 0.0;
    for (std::size_t i = 1; i < p.size(); i += 2) {
      inter += static_cast<double>(p[i]) * g[i];
      p2 += static_cast<double>(p[i]) * p[i];
      g2 += static_cast<double>(g[i]) * g[i];
    }
    const double denom = p2 + g2 + tau;
    total += 1.0 - 2.0 * inter / denom;
    auto d = r.grad.item(n);
    const double scale = 1.0 / (batch * denom * denom);
    for (std::size_t i = 1; i < p.size(); i += 2) {
      d[i] = static_cast<T>((4.0 * inter * p[i] - 2.0 * g[i] * denom) * scale);
    }
  }
  r.loss = static_cast<T>(total / batch);
  return r;
}

template <typename T>
LossResult<T> cross_entropy_seg_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  check_pair(pred, gt, "cross_entropy_seg_loss");
  LossResult<T> r;
  r.grad = Tensor<T>(pred.shape());
  const double n_elems = static_cast<double>(pred.height()) * pred.width() * 2;
  const double norm = n_elems * pred.batch();
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double s = std::max(static_cast<double>(pred[i]), 1e-12);
    total -= gt[i] * std::log(s);
    r.grad[i] = static_cast<T>((pred[i] - gt[i]) / norm);
  }
  r.loss = static_cast<T>(total / norm);
  return r;
}

double total_loss(double seg_loss, double contour_loss) {
  if (!std::isfinite(seg_loss) || !std::isfinite(contour_loss)) {
    throw std::invalid_argument("total_loss: non-finite component");
  }
  return seg_loss + contour_loss;
}

#define MAFASEG_INSTANTIATE(T)                                                             \
  template Tensor<T> one_hot(const BinaryMask&);                                           \
  template Tensor<T> extract_contour_gt(const BinaryMask&, int);                           \
  template LossResult<T> dice_contour_loss(const Tensor<T>&, const Tensor<T>&, double);    \
  template LossResult<T> cross_entropy_seg_loss(const Tensor<T>&, const Tensor<T>&);

MAFASEG_INSTANTIATE(float)
MAFASEG_INSTANTIATE(double)
#undef MAFASEG_INSTANTIATE

}  // namespace mafaseg::contour
