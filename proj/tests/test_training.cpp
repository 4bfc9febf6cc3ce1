#include <gtest/gtest.h>

#include "mafaseg/training.hpp"
#include "test_util.hpp"

using namespace mafaseg;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.model.input_size = 32;
  c.augment = data::AugmentConfig::none();
  c.train.dropout_keep = 1.0;
  c.train.batch_size = 4;
  c.train.epochs = 300;
  c.train.lr = 0.003;
  c.train.lr_decay = 1.0;
  c.data.synth_count = 4;
  c.data.synth_subsets = 1;
  return c;
}

std::vector<data::Sample> nonempty_scenes(int n, int size) {
  data::SynthOptions o;
  o.size = size;
  std::vector<data::Sample> out;
  for (int i = 0; static_cast<int>(out.size()) < n; ++i) {
    auto s = data::generate_scene(17, i, o);
    if (s.mask.count() > 20) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Training, OverfitsFourImages) {
  auto cfg = tiny_experiment();
  cfg.train.max_steps = 300;
  const auto samples = nonempty_scenes(4, 32);
  model::Network<float> net(cfg.model, cfg.train.seed);
  AdamState adam = AdamState::for_params(net.params());
  const auto r = train_model(net, adam, samples, cfg);
  EXPECT_EQ(r.steps.size(), 300u);
  const auto eval = evaluate(net, samples, InferenceOptions{}, 10, false);
  double worst = 1.0;
  for (const auto& rec : eval.records) worst = std::min(worst, rec.iou);
  EXPECT_GE(worst, 0.95);
  EXPECT_LT(r.steps.back().total, r.steps.front().total);
}

TEST(Training, SingleThreadedRunsAreBitIdentical) {
  auto cfg = tiny_experiment();
  cfg.augment = data::AugmentConfig{};
  cfg.train.dropout_keep = 0.5;
  cfg.train.max_steps = 4;
  const auto samples = nonempty_scenes(6, 32);
  auto run = [&] {
    model::Network<float> net(cfg.model, 3);
    AdamState adam = AdamState::for_params(net.params());
    auto r = train_model(net, adam, samples, cfg);
    std::vector<Tensor<float>> values;
    for (std::size_t i = 0; i < net.params().size(); ++i) values.push_back(net.params().value(i));
    return std::make_pair(r.steps.back().total, values);
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Training, LossRowsFollowSchedule) {
  auto cfg = tiny_experiment();
  cfg.train.epochs = 3;
  cfg.train.lr = 0.0005;
  cfg.train.lr_decay = 0.5;
  cfg.train.lr_decay_epochs = 1;
  const auto samples = nonempty_scenes(5, 32);
  model::Network<float> net(cfg.model, 1);
  AdamState adam = AdamState::for_params(net.params());
  int epochs_seen = 0;
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochSummary&) { ++epochs_seen; };
  const auto r = train_model(net, adam, samples, cfg, cb);
  EXPECT_EQ(epochs_seen, 3);
  ASSERT_EQ(r.steps.size(), 6u);  // 5 samples in batches of 4
  EXPECT_DOUBLE_EQ(r.steps[0].lr, 0.0005);
  EXPECT_DOUBLE_EQ(r.steps[2].lr, 0.00025);
  EXPECT_DOUBLE_EQ(r.steps[5].lr, 0.000125);
  for (const auto& row : r.steps) EXPECT_DOUBLE_EQ(row.total, row.seg_loss + row.contour_loss);
}

TEST(Training, ContourOffDropsContourLoss) {
  auto cfg = tiny_experiment();
  const auto samples = nonempty_scenes(2, 32);
  model::Network<float> net(cfg.model, 1);
  std::vector<const data::Sample*> ptrs = {&samples[0], &samples[1]};
  std::vector<BinaryMask> masks = {samples[0].mask, samples[1].mask};
  const auto off = compute_gradients<float>(net, batch_images(ptrs), masks, {}, false, 3, {});
  EXPECT_EQ(off.contour_loss, 0.0);
  const auto on = compute_gradients<float>(net, batch_images(ptrs), masks, {}, true, 3, {});
  EXPECT_GT(on.contour_loss, 0.0);
  EXPECT_DOUBLE_EQ(on.seg_loss, off.seg_loss);
}

TEST(Evaluation, RecordsAndRotationalProbe) {
  auto cfg = tiny_experiment();
  const auto samples = nonempty_scenes(3, 32);
  model::Network<float> net(cfg.model, 1);
  const auto e = evaluate(net, samples, InferenceOptions{}, 10, true);
  ASSERT_EQ(e.records.size(), 3u);
  ASSERT_EQ(e.rotational.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(e.records[i].id, samples[i].id);
    EXPECT_EQ(e.rotational[i].per_angle.size(), 6u);
    EXPECT_DOUBLE_EQ(e.records[i].iou, e.rotational[i].per_angle[0]);
    EXPECT_DOUBLE_EQ(e.records[i].iou, metrics::iou(e.predictions[i], samples[i].mask));
  }
}

TEST(Overlay, Colors) {
  RasterMap img(1, 4, 4, 3);
  BinaryMask pred(4, 4), gt(4, 4);
  pred.at(0, 0) = 1;
  for (int y = 1; y < 4; ++y)
    for (int x = 1; x < 4; ++x) gt.at(y, x) = 1;
  const auto o = overlay(img, pred, gt);
  EXPECT_GT(o.at(0, 0, 0, 1), o.at(0, 0, 0, 0));
  EXPECT_GT(o.at(0, 1, 1, 0), o.at(0, 1, 1, 1));
  EXPECT_EQ(o.at(0, 0, 3, 0), 0.f);
}
