#include "mafaseg/training.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "mafaseg/contour.hpp"
#include "mafaseg/parallel.hpp"

namespace mafaseg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename T>
Tensor<T> one_hot_batch(const std::vector<BinaryMask>& masks, int contour_width) {
  std::vector<Tensor<T>> parts;
  parts.reserve(masks.size());
  for (const auto& m : masks) {
    parts.push_back(contour_width > 0 ? contour::extract_contour_gt<T>(m, contour_width)
                                      : contour::one_hot<T>(m));
  }
  return stack_batch<T>(parts);
}

constexpr std::uint64_t kShuffleStream = 1ull << 60;
constexpr std::uint64_t kAugmentStream = 2ull << 60;
constexpr std::uint64_t kDropoutStream = 3ull << 60;

}  // namespace

Tensor<float> batch_images(const std::vector<const data::Sample*>& samples) {
  std::vector<Tensor<float>> parts;
  parts.reserve(samples.size());
  for (const auto* s : samples) parts.push_back(s->image);
  return stack_batch<float>(parts);
}

template <typename T>
BatchLoss compute_gradients(model::Network<T>& net, const Tensor<T>& images,
                            const std::vector<BinaryMask>& masks, const mafa::MafaConfig& mafa,
                            bool contour, int contour_width, const model::ForwardOptions& opts) {
  model::Trace<T> trace;
  const auto out = net.forward(images, mafa, nn::Mode::Train, opts, &trace);
  const auto seg = contour::cross_entropy_seg_loss(out.seg, one_hot_batch<T>(masks, 0));
  BatchLoss loss;
  loss.seg_loss = seg.loss;
  Tensor<T> grad_contour(out.contour.shape());
  if (contour) {
    const auto dice =
        contour::dice_contour_loss(out.contour, one_hot_batch<T>(masks, contour_width));
    loss.contour_loss = dice.loss;
    grad_contour = nn::softmax_pair_backward(out.contour, dice.grad, 0);
  }
  net.params().zero_grad();
  net.backward(trace, seg.grad, grad_contour);
  return loss;
}

template BatchLoss compute_gradients(model::Network<float>&, const Tensor<float>&,
                                     const std::vector<BinaryMask>&, const mafa::MafaConfig&,
                                     bool, int, const model::ForwardOptions&);
template BatchLoss compute_gradients(model::Network<double>&, const Tensor<double>&,
                                     const std::vector<BinaryMask>&, const mafa::MafaConfig&,
                                     bool, int, const model::ForwardOptions&);

TrainResult train_model(model::Network<float>& net, AdamState& adam,
                        const std::vector<data::Sample>& samples, const ExperimentConfig& cfg,
                        const TrainCallbacks& callbacks) {
  if (samples.empty()) throw std::invalid_argument("train_model: empty training set");
  const auto t0 = Clock::now();
  const TrainConfig& tc = cfg.train;
  const LrSchedule schedule{tc.lr, tc.lr_decay, tc.lr_decay_epochs};
  const int size = net.config().input_size;
  for (const auto& s : samples) {
    if (s.image.height() != size || s.image.width() != size) {
      throw std::runtime_error("sample " + s.id + " is " + std::to_string(s.image.height()) + "x" +
                               std::to_string(s.image.width()) + ", model expects " +
                               std::to_string(size));
    }
  }

  TrainResult result;
  std::vector<std::size_t> order(samples.size());
  int step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle = Rng::derive(tc.seed, kShuffleStream + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    const double lr = lr_at(epoch, schedule);
    EpochSummary summary;
    summary.epoch = epoch;
    summary.lr = lr;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t count = std::min<std::size_t>(tc.batch_size, order.size() - start);
      std::vector<data::Sample> batch(count);
      parallel_for(count, [&](std::size_t j) {
        const std::size_t pos = start + j;
        Rng rng = Rng::derive(tc.seed, kAugmentStream +
                                           (static_cast<std::uint64_t>(epoch) << 32) + pos);
        batch[j] = data::augment(samples[order[pos]], cfg.augment, rng);
      });
      std::vector<const data::Sample*> ptrs;
      std::vector<BinaryMask> masks;
      for (const auto& s : batch) {
        ptrs.push_back(&s);
        masks.push_back(s.mask);
      }
      Rng dropout_rng = Rng::derive(tc.seed, kDropoutStream + static_cast<std::uint64_t>(step));
      model::ForwardOptions opts;
      opts.dropout_keep = tc.dropout_keep;
      opts.rng = &dropout_rng;
      const BatchLoss loss = compute_gradients<float>(net, batch_images(ptrs), masks, cfg.mafa,
                                                      tc.contour, tc.contour_width, opts);
      const double total = loss.seg_loss + loss.contour_loss;
      if (!std::isfinite(total)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(step));
      }
      AdamConfig ac;
      ac.lr = lr;
      adam_step(net.params(), adam, ac);

      LossRow row{epoch, step, loss.seg_loss, loss.contour_loss, total, lr};
      result.steps.push_back(row);
      if (callbacks.on_step) callbacks.on_step(row);
      summary.seg_loss += loss.seg_loss * count;
      summary.contour_loss += loss.contour_loss * count;
      seen += count;
      ++step;
      if (tc.max_steps > 0 && step >= tc.max_steps) break;
    }
    summary.seg_loss /= static_cast<double>(seen);
    summary.contour_loss /= static_cast<double>(seen);
    summary.total = summary.seg_loss + summary.contour_loss;
    result.epochs.push_back(summary);
    if (callbacks.on_epoch) callbacks.on_epoch(summary);
    if (tc.max_steps > 0 && step >= tc.max_steps) break;
  }
  result.seconds = seconds_since(t0);
  return result;
}

Tensor<float> predict_seg(const model::Network<float>& net, const Tensor<float>& images,
                          const InferenceOptions& opts) {
  if (!opts.ensemble) return net.infer(images, opts.mafa).seg;
  const mafa::MapFn<float> plain = [&net](const Tensor<float>& x) {
    return net.infer(x, mafa::MafaConfig{}).seg;
  };
  const auto angles = opts.mafa.angles();
  return mafa::ensemble_predict<float>(images, plain, angles, opts.mafa.rotation_mode);
}

Tensor<float> predict_contour(const model::Network<float>& net, const Tensor<float>& images,
                              const InferenceOptions& opts) {
  if (!opts.ensemble) return net.infer(images, opts.mafa).contour;
  const mafa::MapFn<float> plain = [&net](const Tensor<float>& x) {
    return net.infer(x, mafa::MafaConfig{}).contour;
  };
  const auto angles = opts.mafa.angles();
  return mafa::ensemble_predict<float>(images, plain, angles, opts.mafa.rotation_mode);
}

EvalOutput evaluate(const model::Network<float>& net, const std::vector<data::Sample>& samples,
                    const InferenceOptions& opts, int band_half_width, bool rotational) {
  const auto t0 = Clock::now();
  EvalOutput out;
  const std::size_t n = samples.size();
  out.records.resize(n);
  out.rotational.resize(n);
  out.predictions.resize(n);
  const auto angles = rotational ? metrics::evaluation_angles()
                                 : std::vector<geometry::Angle>{geometry::Angle(0.0)};
  parallel_for(n, [&](std::size_t i) {
    const auto& s = samples[i];
    std::vector<Tensor<float>> rotated;
    for (const auto& a : angles) {
      rotated.push_back(geometry::rotate(s.image, a, geometry::RotationMode::Bilinear));
    }
    const Tensor<float> probs = predict_seg(net, stack_batch<float>(rotated), opts);
    std::vector<double> ious;
    for (std::size_t k = 0; k < angles.size(); ++k) {
      const BinaryMask pred = model::predict_mask(probs, opts.threshold, static_cast<int>(k));
      ious.push_back(metrics::iou(pred, geometry::rotate_mask(s.mask, angles[k])));
      if (k == 0) out.predictions[i] = pred;
    }
    const BinaryMask& pred = out.predictions[i];
    auto& r = out.records[i];
    r.id = s.id;
    r.dsc = metrics::dsc(pred, s.mask);
    r.iou = metrics::iou(pred, s.mask);
    r.iou_nb = metrics::iou_nb(pred, s.mask, metrics::near_boundary_band(s.mask, band_half_width));
    if (rotational) {
      out.rotational[i] = metrics::rotational_stats(ious);
      r.rm_iou = out.rotational[i].rm;
      r.rsd_iou = out.rotational[i].rsd;
    } else {
      r.rm_iou = r.iou;
      r.rsd_iou = 0.0;
    }
  });
  if (n > 0) out.summary = metrics::dataset_summary(out.records);
  out.seconds = seconds_since(t0);
  return out;
}

namespace {

std::vector<data::Sample> dataset_for(const ExperimentConfig& cfg, const std::string& dir,
                                      std::uint64_t seed, int count) {
  std::vector<data::Sample> samples;
  if (dir.empty()) {
    data::SynthOptions so;
    so.size = cfg.model.input_size;
    so.difficulty = cfg.data.difficulty;
    so.subsets = cfg.data.synth_subsets;
    samples = data::generate_synthetic(seed, count, so);
  } else {
    samples = data::load_dataset(dir);
  }
  for (const auto& s : samples) {
    if (s.image.height() != cfg.model.input_size || s.image.width() != cfg.model.input_size) {
      throw std::runtime_error("sample " + s.id + " in " + (dir.empty() ? "synthetic set" : dir) +
                               " is " + std::to_string(s.image.height()) + "x" +
                               std::to_string(s.image.width()) + ", model.input_size is " +
                               std::to_string(cfg.model.input_size));
    }
  }
  return samples;
}

}  // namespace

std::vector<data::Sample> training_set(const ExperimentConfig& cfg) {
  return dataset_for(cfg, cfg.data.train, cfg.data.synth_seed, cfg.data.synth_count);
}

std::vector<data::Sample> test_set(const ExperimentConfig& cfg) {
  return dataset_for(cfg, cfg.data.test, cfg.data.synth_test_seed, cfg.data.synth_test_count);
}

RasterMap overlay(const RasterMap& image, const BinaryMask& pred, const BinaryMask& gt) {
  RasterMap out = image;
  const BinaryMask edge = metrics::boundary_pixels(gt);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      float* px = &out.at(0, y, x, 0);
      if (pred.at(y, x)) {
        px[0] *= 0.5f;
        px[1] = 0.5f * px[1] + 0.5f;
        px[2] *= 0.5f;
      }
      if (edge.at(y, x)) {
        px[0] = 1.0f;
        px[1] = 0.0f;
        px[2] = 0.0f;
      }
    }
  }
  return out;
}

}  // namespace mafaseg
