#pragma once

#include "mafaseg/tensor.hpp"

// Contour ground truth and the two training losses. Segmentation and contour
// maps are (N, H, W, 2) tensors: channel 0 background / non-contour, channel 1
// foreground / contour.
namespace mafaseg::contour {

/// Foreground pixels whose city-block distance to the nearest background
/// pixel is <= width. Pixels outside the grid count as background.
BinaryMask contour_band(const BinaryMask& mask, int width = 3);

/// (1, H, W, 2) one-hot map with channel 1 = mask.
template <typename T>
Tensor<T> one_hot(const BinaryMask& mask);

/// One-hot contour ground truth: one_hot(contour_band(mask, width)).
template <typename T>
Tensor<T> extract_contour_gt(const BinaryMask& mask, int width = 3);

template <typename T>
struct LossResult {
  T loss = T(0);
  Tensor<T> grad;
};

inline constexpr double kDiceTau = 1e-6;

/// Dice loss over the contour channel only, per image, averaged over the
/// batch: 1 - sum(2 C C') / (sum C^2 + sum C'^2 + tau). The gradient is with
/// respect to the predicted probabilities and is zero on channel 0.
template <typename T>
LossResult<T> dice_contour_loss(const Tensor<T>& pred, const Tensor<T>& gt,
                                double tau = kDiceTau);

/// Cross-entropy -(1/N) sum S' log S with N = H * W * 2 per image, averaged
/// over the batch (probabilities clamped at 1e-12). The gradient is with
/// respect to the pair logits that produced `pred` through softmax_pair:
/// (S - S') / N for one-hot targets.
template <typename T>
LossResult<T> cross_entropy_seg_loss(const Tensor<T>& pred, const Tensor<T>& gt);

/// Unweighted sum of the segmentation and contour losses.
double total_loss(double seg_loss, double contour_loss);

}  // namespace mafaseg::contour
