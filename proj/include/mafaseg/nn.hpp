#pragma once

#include <cstdint>
#include <optional>

#include "mafaseg/rng.hpp"
#include "mafaseg/tensor.hpp"

// Differentiable building blocks. Every op comes as a forward function plus a
// backward function returning exact analytic gradients. Kernels are stored as
// 4-D tensors reinterpreted as (kh, kw, in, out); per-channel vectors as
// (1, 1, 1, C).
namespace mafaseg::nn {

enum class Mode { Train, Infer };

struct ConvSpec {
  int stride = 1;
  int dilation = 1;
};

/// "Same" padding geometry shared by all spatial convolutions.
struct Padding {
  int out_h;
  int out_w;
  int top;
  int left;
};
Padding same_padding(int h, int w, int kh, int kw, ConvSpec spec);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, ConvSpec spec);

/// Gradients of conv2d. grad_kernel is accumulated into (it must already have
/// the kernel's shape); grad_x is overwritten when non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, ConvSpec spec,
                     const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_kernel);

/// Per-channel spatial convolution; kernel shape (kh, kw, C, 1).
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, ConvSpec spec);

template <typename T>
void depthwise_conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, ConvSpec spec,
                               const Tensor<T>& grad_out, Tensor<T>* grad_x,
                               Tensor<T>* grad_kernel);

/// Depthwise kernel followed by a 1x1 pointwise kernel (1, 1, C, out).
template <typename T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& x, const Tensor<T>& depthwise,
                                   const Tensor<T>& pointwise, int stride);

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
template <typename T>
void add_bias_backward(const Tensor<T>& grad_out, Tensor<T>* grad_bias);

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;  // x-hat
  std::vector<T> inv_std;
  Mode mode = Mode::Train;
};

/// Per-channel batch normalization. In train mode normalizes with batch
/// statistics (biased variance) and updates the running statistics as
/// running = momentum * running + (1 - momentum) * batch.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                    Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode, T momentum,
                    T epsilon, BatchNormCache<T>* cache);

template <typename T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& scale,
                             const Tensor<T>& grad_out, Tensor<T>* grad_scale,
                             Tensor<T>* grad_shift);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
/// Uses the forward output: gradient passes where output > 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

/// Two-way softmax over channels (first, first + 1); other channels are copied.
template <typename T>
Tensor<T> softmax_pair(const Tensor<T>& logits, int first);
/// Chains a gradient w.r.t. the pair probabilities back to the pair logits.
/// `probs` is the softmax_pair output; other channels pass through unchanged.
template <typename T>
Tensor<T> softmax_pair_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs, int first);

/// Corner-aligned bilinear resize to (out_h, out_w).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w);
template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad_out, int in_h, int in_w);
/// Integer upsampling factor; factor < 1 is rejected.
template <typename T>
Tensor<T> upsample(const Tensor<T>& x, int factor);

/// Inverted dropout: kept units are scaled by 1 / keep_rate. Identity in
/// infer mode or when keep_rate == 1. The mask (0 or 1/keep_rate) is written
/// to *mask when non-null.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double keep_rate, Rng& rng, Mode mode, Tensor<T>* mask);

/// Spatial mean per channel, output (N, 1, 1, C).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, int h, int w);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits a gradient produced for concat_channels(a, b) with `first` channels in a.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first);

}  // namespace mafaseg::nn
