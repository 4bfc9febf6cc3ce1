#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mafaseg/mafa.hpp"
#include "mafaseg/nn.hpp"
#include "mafaseg/params.hpp"

namespace mafaseg::model {

/// Reduced-width DeepLabv3+-style encoder-decoder configuration.
struct ModelConfig {
  int input_size = 96;
  std::vector<int> encoder_widths{16, 32, 64};
  int output_stride = 8;
  int aspp_channels = 32;
  int skip_channels = 8;
  std::vector<int> aspp_rates{2, 4};
  std::vector<int> decoder_widths{32, 32};
  bool batchnorm = true;

  static constexpr int kHeadChannels = 4;
  /// The low-level skip tap sits at the first stride-2 stage.
  static constexpr int kSkipStride = 2;

  void validate() const;
  /// Stride of each encoder stage (2 until output_stride is reached, then 1).
  std::vector<int> stage_strides() const;
  /// Number of backbone stages run before the backbone-mid boundary.
  int mid_stage_count() const;
  int high_level_size() const { return input_size / output_stride; }
  int skip_size() const { return input_size / kSkipStride; }
  /// Bilinear factor taking the ASPP map to the skip resolution.
  int high_level_resize_factor() const { return output_stride / kSkipStride; }
  /// Bilinear factor taking the head output to the input size.
  int final_resize_factor() const { return kSkipStride; }

  bool operator==(const ModelConfig&) const = default;
};

struct ForwardOptions {
  /// Keep rate of the dropout on the backbone output (train mode only).
  double dropout_keep = 1.0;
  /// Dropout mask stream; required when dropout is active.
  Rng* rng = nullptr;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> logits;             // (N, H, W, 4)
  Tensor<T> seg;                // (N, H, W, 2) background / foreground
  Tensor<T> contour;            // (N, H, W, 2) non-contour / contour
  Tensor<T> encoder_features;   // aggregated encoder output (N, h, w, N_high + N_low)
};

/// Indices of one conv unit's parameters: [depthwise 3x3] -> conv ->
/// [bias] -> [batchnorm] -> [relu].
struct Block {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  int id = 0;
  std::size_t depthwise = kNone;
  std::size_t kernel = kNone;
  std::size_t bias = kNone;
  std::size_t bn_scale = kNone;
  std::size_t bn_shift = kNone;
  std::size_t bn_mean = kNone;
  std::size_t bn_var = kNone;
  nn::ConvSpec spec{};
  bool relu = true;
};

template <typename T>
struct BlockCache {
  Tensor<T> input;
  Tensor<T> after_depthwise;
  Tensor<T> output;
  nn::BatchNormCache<T> bn;
};

/// Multi-angle maps crossing a fusion boundary: the aligned per-angle maps
/// (kept for max-out routing).
template <typename T>
struct FuseCache {
  std::vector<Tensor<T>> aligned;
};

/// Per-pass caches filled by Network::forward and consumed by backward.
template <typename T>
struct Trace {
  std::vector<BlockCache<T>> blocks;
  std::vector<geometry::Angle> angles;
  mafa::MafaConfig mafa;
  int batch = 0;
  Tensor<T> dropout_mask;
  Tensor<T> pool_input;
  Tensor<T> pool_output;
  Tensor<T> pool_relu;
  FuseCache<T> fuse_trunk;
  FuseCache<T> fuse_skip;
  FuseCache<T> fuse_encoder;
  Tensor<T> probs;  // (N, H, W, 4) after both pair softmaxes
  bool valid = false;
};

/// Ordered layer blocks plus their parameters. Forward passes keep whatever
/// backward needs in a caller-owned Trace, so inference through a const
/// Network is safe from several threads.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Full forward pass. In train mode batch statistics are used and the
  /// running statistics updated; `trace` must then be non-null. With
  /// n_angles = 1 the result is bit-identical to a plain (MAFA-free) pass.
  ForwardOutput<T> forward(const Tensor<T>& images, const mafa::MafaConfig& mafa, nn::Mode mode,
                           const ForwardOptions& opts, Trace<T>* trace);

  /// Inference-mode forward without tracing.
  ForwardOutput<T> infer(const Tensor<T>& images, const mafa::MafaConfig& mafa) const;

  /// Plain encoder (backbone, ASPP, skip concat) in inference mode.
  Tensor<T> encode(const Tensor<T>& images) const;

  /// Accumulates parameter gradients from gradients w.r.t. the seg and
  /// contour logits (each (N, H, W, 2)) of the traced forward pass.
  void backward(Trace<T>& trace, const Tensor<T>& grad_seg_logits,
                const Tensor<T>& grad_contour_logits);

 private:
  struct BnUpdate {
    std::size_t mean;
    std::size_t var;
    Tensor<T> new_mean;
    Tensor<T> new_var;
  };

  ForwardOutput<T> run(const Tensor<T>& images, const mafa::MafaConfig& mafa, nn::Mode mode,
                       const ForwardOptions& opts, Trace<T>* trace, std::vector<BnUpdate>* updates,
                       bool stop_at_encoder) const;
  Tensor<T> block_forward(const Block& b, const Tensor<T>& x, nn::Mode mode, Trace<T>* trace,
                          std::vector<BnUpdate>* updates) const;
  Tensor<T> block_backward(const Block& b, Trace<T>& trace, const Tensor<T>& grad_out,
                           bool need_input_grad);

  Block make_block(const std::string& name, int kh, int in, int out, nn::ConvSpec spec,
                   bool depthwise, bool bias, bool bn, bool relu, Rng& rng);

  ModelConfig cfg_;
  ParamSet<T> params_;
  std::vector<Block> stages_;
  Block aspp_1x1_;
  std::vector<Block> aspp_atrous_;
  Block aspp_pool_;
  Block aspp_project_;
  Block skip_;
  std::vector<Block> decoder_;
  Block head_;
  int block_count_ = 0;
};

/// Foreground where the foreground probability is strictly above threshold.
template <typename T>
BinaryMask predict_mask(const Tensor<T>& seg, double threshold = 0.5, int item = 0);

/// JSON sidecar written next to checkpoints.
std::string sidecar_json(const ModelConfig& model, const mafa::MafaConfig& mafa);
void parse_sidecar_json(const std::string& text, ModelConfig& model, mafa::MafaConfig& mafa);

}  // namespace mafaseg::model
