#include "mafaseg/model.hpp"

#include <nlohmann/json.hpp>
#include <stdexcept>

#include "mafaseg/geometry.hpp"

namespace mafaseg::model {

using geometry::RotationMode;
using mafa::Placement;
using nn::Mode;

namespace {

constexpr double kBnMomentum = 0.9;
constexpr double kBnEpsilon = 1e-5;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("ModelConfig: " + msg);
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

template <typename T>
Tensor<T> concat_all(const std::vector<Tensor<T>>& parts) {
  Tensor<T> out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out = nn::concat_channels(out, parts[i]);
  return out;
}

// Inverse of concat_all for equally sized channel groups.
template <typename T>
std::vector<Tensor<T>> split_equal(const Tensor<T>& x, int parts) {
  std::vector<Tensor<T>> out;
  const int each = x.channels() / parts;
  Tensor<T> rest = x;
  for (int i = 0; i < parts - 1; ++i) {
    auto [head, tail] = nn::split_channels(rest, each);
    out.push_back(std::move(head));
    rest = std::move(tail);
  }
  out.push_back(std::move(rest));
  return out;
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& v) {
  if (!(acc.shape() == v.shape())) throw std::logic_error("gradient shape mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

}  // namespace

void ModelConfig::validate() const {
  require(input_size >= 1, "input_size must be >= 1");
  require(!encoder_widths.empty(), "encoder_widths must not be empty");
  for (int w : encoder_widths) require(w >= 1, "encoder widths must be >= 1");
  require(is_power_of_two(output_stride) && output_stride >= kSkipStride,
          "output_stride must be a power of two >= 2");
  require(output_stride <= (1 << encoder_widths.size()),
          "output_stride needs more encoder stages than configured");
  require(input_size % output_stride == 0, "input_size must be divisible by output_stride");
  require(aspp_channels >= 1 && skip_channels >= 1, "aspp/skip channels must be >= 1");
  require(!aspp_rates.empty(), "aspp_rates must not be empty");
  for (int r : aspp_rates) require(r >= 1, "aspp rates must be >= 1");
  for (int w : decoder_widths) require(w >= 1, "decoder widths must be >= 1");
}

std::vector<int> ModelConfig::stage_strides() const {
  std::vector<int> strides;
  int cumulative = 1;
  for (std::size_t i = 0; i < encoder_widths.size(); ++i) {
    const int s = cumulative < output_stride ? 2 : 1;
    cumulative *= s;
    strides.push_back(s);
  }
  return strides;
}

int ModelConfig::mid_stage_count() const {
  const int stages = static_cast<int>(encoder_widths.size());
  return std::min(stages, stages / 2 + 1);
}

template <typename T>
Block Network<T>::make_block(const std::string& name, int kh, int in, int out, nn::ConvSpec spec,
                             bool depthwise, bool bias, bool bn, bool relu, Rng& rng) {
  Block b;
  b.id = block_count_++;
  b.spec = spec;
  b.relu = relu;
  if (depthwise) {
    b.depthwise = params_.add(name + ".dw", Shape{kh, kh, in, 1});
    he_init(params_.value(b.depthwise), kh * kh, rng);
    b.kernel = params_.add(name + ".pw", Shape{1, 1, in, out});
    he_init(params_.value(b.kernel), in, rng);
  } else {
    b.kernel = params_.add(name + ".conv", Shape{kh, kh, in, out});
    he_init(params_.value(b.kernel), kh * kh * in, rng);
  }
  if (bias) b.bias = params_.add(name + ".bias", Shape{1, 1, 1, out});
  if (bn) {
    b.bn_scale = params_.add(name + ".bn.scale", Shape{1, 1, 1, out});
    b.bn_shift = params_.add(name + ".bn.shift", Shape{1, 1, 1, out});
    b.bn_mean = params_.add(name + ".bn.mean", Shape{1, 1, 1, out}, false);
    b.bn_var = params_.add(name + ".bn.var", Shape{1, 1, 1, out}, false);
    params_.value(b.bn_scale).fill(T(1));
    params_.value(b.bn_var).fill(T(1));
  }
  return b;
}

template <typename T>
Network<T>::Network(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const bool bn = cfg_.batchnorm;
  const auto strides = cfg_.stage_strides();
  int in = 3;
  for (std::size_t i = 0; i < cfg_.encoder_widths.size(); ++i) {
    const int out = cfg_.encoder_widths[i];
    stages_.push_back(make_block("enc.stage" + std::to_string(i), 3, in, out,
                                 nn::ConvSpec{strides[i], 1}, false, !bn, bn, true, rng));
    in = out;
  }
  const int backbone = in;
  const int a = cfg_.aspp_channels;
  aspp_1x1_ = make_block("aspp.conv1x1", 1, backbone, a, {}, false, !bn, bn, true, rng);
  for (int r : cfg_.aspp_rates) {
    aspp_atrous_.push_back(make_block("aspp.atrous" + std::to_string(r), 3, backbone, a,
                                      nn::ConvSpec{1, r}, false, !bn, bn, true, rng));
  }
  // Batch statistics of a 1x1 pooled map are degenerate, so this branch
  // uses a bias instead of batchnorm.
  aspp_pool_ = make_block("aspp.pool", 1, backbone, a, {}, false, true, false, true, rng);
  const int branches = 2 + static_cast<int>(cfg_.aspp_rates.size());
  aspp_project_ = make_block("aspp.project", 1, a * branches, a, {}, false, !bn, bn, true, rng);
  skip_ = make_block("skip.adapt", 1, cfg_.encoder_widths.front(), cfg_.skip_channels, {}, false,
                     !bn, bn, true, rng);
  int dec_in = a + cfg_.skip_channels;
  for (std::size_t i = 0; i < cfg_.decoder_widths.size(); ++i) {
    decoder_.push_back(make_block("dec." + std::to_string(i), 3, dec_in, cfg_.decoder_widths[i],
                                  {}, true, !bn, bn, true, rng));
    dec_in = cfg_.decoder_widths[i];
  }
  head_ = make_block("head", 3, dec_in, ModelConfig::kHeadChannels, {}, true, true, false, false,
                     rng);
}

template <typename T>
Tensor<T> Network<T>::block_forward(const Block& b, const Tensor<T>& x, Mode mode,
                                    Trace<T>* trace, std::vector<BnUpdate>* updates) const {
  BlockCache<T>* cache = trace ? &trace->blocks[static_cast<std::size_t>(b.id)] : nullptr;
  if (cache) cache->input = x;
  Tensor<T> y;
  if (b.depthwise != Block::kNone) {
    Tensor<T> mid = nn::depthwise_conv2d(x, params_.value(b.depthwise), b.spec);
    y = nn::conv2d(mid, params_.value(b.kernel), nn::ConvSpec{});
    if (cache) cache->after_depthwise = std::move(mid);
  } else {
    y = nn::conv2d(x, params_.value(b.kernel), b.spec);
  }
  if (b.bias != Block::kNone) y = nn::add_bias(y, params_.value(b.bias));
  if (b.bn_scale != Block::kNone) {
    Tensor<T> mean = params_.value(b.bn_mean);
    Tensor<T> var = params_.value(b.bn_var);
    y = nn::batchnorm(y, params_.value(b.bn_scale), params_.value(b.bn_shift), mean, var, mode,
                      static_cast<T>(kBnMomentum), static_cast<T>(kBnEpsilon),
                      cache ? &cache->bn : nullptr);
    if (mode == Mode::Train && updates) {
      updates->push_back({b.bn_mean, b.bn_var, std::move(mean), std::move(var)});
    }
  }
  if (b.relu) y = nn::relu(y);
  if (cache) cache->output = y;
  return y;
}

template <typename T>
Tensor<T> Network<T>::block_backward(const Block& b, Trace<T>& trace, const Tensor<T>& grad_out,
                                     bool need_input_grad) {
  BlockCache<T>& cache = trace.blocks[static_cast<std::size_t>(b.id)];
  Tensor<T> g = b.relu ? nn::relu_backward(cache.output, grad_out) : grad_out;
  if (b.bn_scale != Block::kNone) {
    g = nn::batchnorm_backward(cache.bn, params_.value(b.bn_scale), g, &params_.grad(b.bn_scale),
                               &params_.grad(b.bn_shift));
  }
  if (b.bias != Block::kNone) nn::add_bias_backward(g, &params_.grad(b.bias));
  Tensor<T> dx;
  if (b.depthwise != Block::kNone) {
    Tensor<T> dmid;
    nn::conv2d_backward(cache.after_depthwise, params_.value(b.kernel), nn::ConvSpec{}, g, &dmid,
                        &params_.grad(b.kernel));
    nn::depthwise_conv2d_backward(cache.input, params_.value(b.depthwise), b.spec, dmid,
                                  need_input_grad ? &dx : nullptr, &params_.grad(b.depthwise));
  } else {
    nn::conv2d_backward(cache.input, params_.value(b.kernel), b.spec, g,
                        need_input_grad ? &dx : nullptr, &params_.grad(b.kernel));
  }
  return dx;
}

template <typename T>
ForwardOutput<T> Network<T>::run(const Tensor<T>& images, const mafa::MafaConfig& mcfg, Mode mode,
                                 const ForwardOptions& opts, Trace<T>* trace,
                                 std::vector<BnUpdate>* updates, bool stop_at_encoder) const {
  mcfg.validate();
  const int size = cfg_.input_size;
  if (images.height() != size || images.width() != size || images.channels() != 3) {
    throw std::invalid_argument("Network: expected (N, " + std::to_string(size) + ", " +
                                std::to_string(size) + ", 3) images, got " +
                                images.shape().str());
  }
  const int batch = images.batch();
  const auto angles = mcfg.angles();
  const int n_angles = static_cast<int>(angles.size());
  const RotationMode rmode = mcfg.rotation_mode;
  if (trace) {
    trace->blocks.assign(static_cast<std::size_t>(block_count_), BlockCache<T>{});
    trace->angles = angles;
    trace->mafa = mcfg;
    trace->batch = batch;
    trace->fuse_trunk = {};
    trace->fuse_skip = {};
    trace->fuse_encoder = {};
    trace->valid = true;
  }

  // Rotated copies are stacked angle-major so the shared encoder sees them
  // as one batch.
  Tensor<T> x;
  if (n_angles == 1) {
    x = images;
  } else {
    std::vector<Tensor<T>> rotated;
    rotated.reserve(angles.size());
    for (const auto& a : angles) rotated.push_back(geometry::rotate(images, a, rmode));
    x = stack_batch<T>(rotated);
  }

  auto fuse = [&](const Tensor<T>& t, FuseCache<T>* fc) {
    std::vector<Tensor<T>> aligned;
    aligned.reserve(angles.size());
    for (int k = 0; k < n_angles; ++k) {
      aligned.push_back(geometry::align(slice_items(t, k * batch, batch), angles[k], rmode));
    }
    Tensor<T> out = mafa::aggregate<T>(aligned, mcfg.aggregation);
    if (fc) fc->aligned = std::move(aligned);
    return out;
  };
  const bool multi = n_angles > 1;

  Tensor<T> trunk = x;
  Tensor<T> skip;
  const int stages = static_cast<int>(stages_.size());
  const int mid = cfg_.mid_stage_count();
  for (int i = 0; i < stages; ++i) {
    trunk = block_forward(stages_[i], trunk, mode, trace, updates);
    if (i == 0) skip = trunk;
    if (multi && mcfg.placement == Placement::BackboneMid && i + 1 == mid) {
      trunk = fuse(trunk, trace ? &trace->fuse_trunk : nullptr);
      skip = fuse(skip, trace ? &trace->fuse_skip : nullptr);
    }
  }
  if (multi && mcfg.placement == Placement::BackboneLast) {
    trunk = fuse(trunk, trace ? &trace->fuse_trunk : nullptr);
    skip = fuse(skip, trace ? &trace->fuse_skip : nullptr);
  }

  if (mode == Mode::Train && opts.dropout_keep < 1.0) {
    if (!opts.rng) throw std::invalid_argument("Network: dropout needs an rng");
    trunk = nn::dropout(trunk, opts.dropout_keep, *opts.rng, mode,
                        trace ? &trace->dropout_mask : nullptr);
  } else if (trace) {
    trace->dropout_mask = Tensor<T>();
  }

  const int hl = trunk.height();
  std::vector<Tensor<T>> branches;
  branches.push_back(block_forward(aspp_1x1_, trunk, mode, trace, updates));
  for (const auto& b : aspp_atrous_) branches.push_back(block_forward(b, trunk, mode, trace, updates));
  Tensor<T> pooled = nn::global_avg_pool(trunk);
  Tensor<T> pooled_feat = block_forward(aspp_pool_, pooled, mode, trace, updates);
  branches.push_back(nn::bilinear_resize(pooled_feat, hl, trunk.width()));
  Tensor<T> high = block_forward(aspp_project_, concat_all(branches), mode, trace, updates);
  Tensor<T> high_up = nn::upsample(high, cfg_.high_level_resize_factor());
  Tensor<T> low = block_forward(skip_, skip, mode, trace, updates);
  Tensor<T> enc = nn::concat_channels(high_up, low);
  if (multi && mcfg.placement == Placement::EncoderOutput) {
    enc = fuse(enc, trace ? &trace->fuse_encoder : nullptr);
  }

  ForwardOutput<T> out;
  if (stop_at_encoder) {
    out.encoder_features = std::move(enc);
    return out;
  }
  Tensor<T> d = enc;
  for (const auto& b : decoder_) d = block_forward(b, d, mode, trace, updates);
  Tensor<T> small = block_forward(head_, d, mode, trace, updates);
  out.logits = nn::upsample(small, cfg_.final_resize_factor());
  Tensor<T> probs = nn::softmax_pair(nn::softmax_pair(out.logits, 0), 2);
  auto [seg, contour] = nn::split_channels(probs, 2);
  out.seg = std::move(seg);
  out.contour = std::move(contour);
  out.encoder_features = std::move(enc);
  if (trace) trace->probs = std::move(probs);
  return out;
}

template <typename T>
ForwardOutput<T> Network<T>::forward(const Tensor<T>& images, const mafa::MafaConfig& mcfg,
                                     Mode mode, const ForwardOptions& opts, Trace<T>* trace) {
  if (mode == Mode::Train && !trace) {
    throw std::invalid_argument("Network::forward: train mode needs a trace");
  }
  std::vector<BnUpdate> updates;
  ForwardOutput<T> out = run(images, mcfg, mode, opts, trace, &updates, false);
  for (auto& u : updates) {
    params_.value(u.mean) = std::move(u.new_mean);
    params_.value(u.var) = std::move(u.new_var);
  }
  return out;
}

template <typename T>
ForwardOutput<T> Network<T>::infer(const Tensor<T>& images, const mafa::MafaConfig& mcfg) const {
  return run(images, mcfg, Mode::Infer, ForwardOptions{}, nullptr, nullptr, false);
}

template <typename T>
Tensor<T> Network<T>::encode(const Tensor<T>& images) const {
  return run(images, mafa::MafaConfig{}, Mode::Infer, ForwardOptions{}, nullptr, nullptr, true)
      .encoder_features;
}

template <typename T>
void Network<T>::backward(Trace<T>& trace, const Tensor<T>& grad_seg_logits,
                          const Tensor<T>& grad_contour_logits) {
  if (!trace.valid) throw std::logic_error("Network::backward: trace holds no forward pass");
  const auto& angles = trace.angles;
  const int n_angles = static_cast<int>(angles.size());
  const bool multi = n_angles > 1;
  const auto& mcfg = trace.mafa;

  // Gradient through align + aggregate back to the stacked per-angle batch.
  auto unfuse = [&](const Tensor<T>& g, const FuseCache<T>& fc) {
    auto per_angle = mafa::aggregate_backward<T>(fc.aligned, g, mcfg.aggregation);
    std::vector<Tensor<T>> parts;
    parts.reserve(per_angle.size());
    for (int k = 0; k < n_angles; ++k) {
      parts.push_back(geometry::rotate_adjoint(per_angle[k], -angles[k], mcfg.rotation_mode));
    }
    return stack_batch<T>(parts);
  };

  Tensor<T> g_logits = nn::concat_channels(grad_seg_logits, grad_contour_logits);
  const int small = cfg_.skip_size();
  Tensor<T> g = nn::bilinear_resize_backward(g_logits, small, small);
  g = block_backward(head_, trace, g, true);
  for (auto it = decoder_.rbegin(); it != decoder_.rend(); ++it) {
    g = block_backward(*it, trace, g, true);
  }
  if (multi && mcfg.placement == Placement::EncoderOutput) g = unfuse(g, trace.fuse_encoder);

  auto [g_high_up, g_low] = nn::split_channels(g, cfg_.aspp_channels);
  Tensor<T> g_skip = block_backward(skip_, trace, g_low, true);
  const int hl = g_high_up.height() / cfg_.high_level_resize_factor();
  Tensor<T> g_high = nn::bilinear_resize_backward(g_high_up, hl, hl);
  Tensor<T> g_cat = block_backward(aspp_project_, trace, g_high, true);
  auto parts = split_equal(g_cat, 2 + static_cast<int>(aspp_atrous_.size()));
  Tensor<T> g_trunk = block_backward(aspp_1x1_, trace, parts[0], true);
  for (std::size_t i = 0; i < aspp_atrous_.size(); ++i) {
    add_into(g_trunk, block_backward(aspp_atrous_[i], trace, parts[i + 1], true));
  }
  Tensor<T> g_pooled = nn::bilinear_resize_backward(parts.back(), 1, 1);
  g_pooled = block_backward(aspp_pool_, trace, g_pooled, true);
  add_into(g_trunk, nn::global_avg_pool_backward(g_pooled, hl, hl));

  if (!trace.dropout_mask.empty()) {
    for (std::size_t i = 0; i < g_trunk.size(); ++i) g_trunk[i] *= trace.dropout_mask[i];
  }
  if (multi && mcfg.placement == Placement::BackboneLast) {
    g_trunk = unfuse(g_trunk, trace.fuse_trunk);
    g_skip = unfuse(g_skip, trace.fuse_skip);
  }
  const int mid = cfg_.mid_stage_count();
  for (int i = static_cast<int>(stages_.size()) - 1; i >= 0; --i) {
    if (multi && mcfg.placement == Placement::BackboneMid && i + 1 == mid) {
      g_trunk = unfuse(g_trunk, trace.fuse_trunk);
      g_skip = unfuse(g_skip, trace.fuse_skip);
    }
    if (i == 0) add_into(g_trunk, g_skip);
    g_trunk = block_backward(stages_[i], trace, g_trunk, i > 0);
  }
}

template <typename T>
BinaryMask predict_mask(const Tensor<T>& seg, double threshold, int item) {
  if (seg.channels() != 2) throw std::invalid_argument("predict_mask: expected a 2-channel map");
  BinaryMask mask(seg.height(), seg.width());
  for (int y = 0; y < seg.height(); ++y) {
    for (int x = 0; x < seg.width(); ++x) {
      mask.at(y, x) = static_cast<double>(seg.at(item, y, x, 1)) > threshold ? 1 : 0;
    }
  }
  return mask;
}

std::string sidecar_json(const ModelConfig& m, const mafa::MafaConfig& a) {
  nlohmann::ordered_json j;
  j["model"] = {{"input_size", m.input_size},
                {"encoder_widths", m.encoder_widths},
                {"output_stride", m.output_stride},
                {"aspp_channels", m.aspp_channels},
                {"skip_channels", m.skip_channels},
                {"aspp_rates", m.aspp_rates},
                {"decoder_widths", m.decoder_widths},
                {"batchnorm", m.batchnorm}};
  j["mafa"] = {{"n_angles", a.n_angles},
               {"aggregation", mafa::to_string(a.aggregation)},
               {"rotation_mode", mafa::to_string(a.rotation_mode)},
               {"placement", mafa::to_string(a.placement)}};
  return j.dump(2) + "\n";
}

void parse_sidecar_json(const std::string& text, ModelConfig& m, mafa::MafaConfig& a) {
  const auto j = nlohmann::json::parse(text);
  const auto& jm = j.at("model");
  m.input_size = jm.at("input_size").get<int>();
  m.encoder_widths = jm.at("encoder_widths").get<std::vector<int>>();
  m.output_stride = jm.at("output_stride").get<int>();
  m.aspp_channels = jm.at("aspp_channels").get<int>();
  m.skip_channels = jm.at("skip_channels").get<int>();
  m.aspp_rates = jm.at("aspp_rates").get<std::vector<int>>();
  m.decoder_widths = jm.at("decoder_widths").get<std::vector<int>>();
  m.batchnorm = jm.at("batchnorm").get<bool>();
  const auto& ja = j.at("mafa");
  a.n_angles = ja.at("n_angles").get<int>();
  a.aggregation = mafa::parse_aggregation(ja.at("aggregation").get<std::string>());
  a.rotation_mode = mafa::parse_rotation_mode(ja.at("rotation_mode").get<std::string>());
  a.placement = mafa::parse_placement(ja.at("placement").get<std::string>());
  m.validate();
  a.validate();
}

template class Network<float>;
template class Network<double>;
template BinaryMask predict_mask(const Tensor<float>&, double, int);
template BinaryMask predict_mask(const Tensor<double>&, double, int);

}  // namespace mafaseg::model
