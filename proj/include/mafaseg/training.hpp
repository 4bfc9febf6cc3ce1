#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mafaseg/config.hpp"
#include "mafaseg/data.hpp"
#include "mafaseg/metrics.hpp"
#include "mafaseg/model.hpp"
#include "mafaseg/params.hpp"

namespace mafaseg {

struct LossRow {
  int epoch = 0;
  int step = 0;
  double seg_loss = 0.0;
  double contour_loss = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct EpochSummary {
  int epoch = 0;
  double seg_loss = 0.0;
  double contour_loss = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

/// Loss of one batch and the gradients it produced (accumulated into the
/// network's parameter gradients).
struct BatchLoss {
  double seg_loss = 0.0;
  double contour_loss = 0.0;
};

/// (N, H, W, 3) tensor from sample images.
Tensor<float> batch_images(const std::vector<const data::Sample*>& samples);

/// Forward + backward for one batch with L = L_S + L_C (L_C dropped when
/// `contour` is false). Parameter gradients are zeroed first.
template <typename T>
BatchLoss compute_gradients(model::Network<T>& net, const Tensor<T>& images,
                            const std::vector<BinaryMask>& masks, const mafa::MafaConfig& mafa,
                            bool contour, int contour_width, const model::ForwardOptions& opts);

struct TrainCallbacks {
  std::function<void(const LossRow&)> on_step;
  /// Called after every epoch; the network and optimizer hold that epoch's state.
  std::function<void(const EpochSummary&)> on_epoch;
};

struct TrainResult {
  std::vector<LossRow> steps;
  std::vector<EpochSummary> epochs;
  double seconds = 0.0;
};

/// Shuffled, augmented mini-batch Adam training. Shuffling and augmentation
/// draw from streams derived from cfg.train.seed, the epoch and the sample
/// position. Throws std::runtime_error on a non-finite loss or gradient.
TrainResult train_model(model::Network<float>& net, AdamState& adam,
                        const std::vector<data::Sample>& samples, const ExperimentConfig& cfg,
                        const TrainCallbacks& callbacks = {});

struct InferenceOptions {
  mafa::MafaConfig mafa;
  /// Averages output maps over mafa.n_angles rotations of a plain model.
  bool ensemble = false;
  double threshold = 0.5;
};

/// Foreground probability maps (N, H, W, 2) for a batch.
Tensor<float> predict_seg(const model::Network<float>& net, const Tensor<float>& images,
                          const InferenceOptions& opts);
/// Contour probability maps (N, H, W, 2) for a batch (plain or MAFA forward).
Tensor<float> predict_contour(const model::Network<float>& net, const Tensor<float>& images,
                              const InferenceOptions& opts);

struct EvalOutput {
  std::vector<metrics::MetricsRecord> records;
  std::vector<metrics::RotationalStats> rotational;
  std::vector<BinaryMask> predictions;
  metrics::Summary summary;
  double seconds = 0.0;
};

/// Per-image DSC, IOU, IOU_NB and (when `rotational`) RM/RSD over the six
/// evaluation angles.
EvalOutput evaluate(const model::Network<float>& net, const std::vector<data::Sample>& samples,
                    const InferenceOptions& opts, int band_half_width, bool rotational);

/// The training and test sets a config describes (loaded or synthesized).
std::vector<data::Sample> training_set(const ExperimentConfig& cfg);
std::vector<data::Sample> test_set(const ExperimentConfig& cfg);

/// Predicted foreground in green and the ground-truth contour in red over
/// the image.
RasterMap overlay(const RasterMap& image, const BinaryMask& pred, const BinaryMask& gt);

}  // namespace mafaseg
