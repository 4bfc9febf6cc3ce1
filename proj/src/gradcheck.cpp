#include "mafaseg/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

#include "mafaseg/contour.hpp"
#include "mafaseg/geometry.hpp"
#include "mafaseg/mafa.hpp"
#include "mafaseg/model.hpp"
#include "mafaseg/nn.hpp"
#include "mafaseg/training.hpp"

namespace mafaseg {

namespace {

using T = double;
using Tn = Tensor<double>;

constexpr double kOpTolerance = 1e-4;
constexpr double kEndToEndTolerance = 1e-3;

Tn random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tn t(s);
  for (auto& v : t.values()) v = rng.normal() * scale;
  return t;
}

double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

double dot(const Tn& a, const Tn& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Compares analytic gradient `grad` of f with respect to `x` against central
// differences at every element.
double check_input(Tn& x, const Tn& grad, const std::function<double()>& f, double h,
                   double perturb) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    worst = std::max(worst, rel_err(grad[i] * perturb, (up - down) / (2.0 * h)));
  }
  return worst;
}

struct Registry {
  const GradCheckOptions& opts;
  std::vector<GradCheckResult> results;

  void run(const std::string& op, double tol, const std::function<double(Rng&, double)>& check) {
    double worst = 0.0;
    for (int s = 0; s < opts.seeds; ++s) {
      Rng rng(0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(s + 1));
      worst = std::max(worst, check(rng, opts.perturb ? 1.01 : 1.0));
    }
    results.push_back({op, worst, tol, worst < tol});
  }
};

// Keeps relu / max inputs away from their kinks.
void push_from_zero(Tn& x, double margin) {
  for (auto& v : x.values()) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
}

double conv_check(Rng& rng, double p, double h, nn::ConvSpec spec, bool depthwise) {
  const int c = 2 + static_cast<int>(rng.below(2));
  const int k = depthwise ? 3 : 1 + 2 * static_cast<int>(rng.below(2));
  const int out = depthwise ? 1 : 2 + static_cast<int>(rng.below(2));
  Tn x = random_tensor({2, 5, 5, c}, rng);
  Tn kernel = random_tensor({k, k, c, out}, rng);
  auto fwd = [&] {
    return depthwise ? nn::depthwise_conv2d(x, kernel, spec) : nn::conv2d(x, kernel, spec);
  };
  const Tn r = random_tensor(fwd().shape(), rng);
  Tn gx;
  Tn gk(kernel.shape());
  if (depthwise) {
    nn::depthwise_conv2d_backward(x, kernel, spec, r, &gx, &gk);
  } else {
    nn::conv2d_backward(x, kernel, spec, r, &gx, &gk);
  }
  auto f = [&] { return dot(fwd(), r); };
  return std::max(check_input(x, gx, f, h, p), check_input(kernel, gk, f, h, p));
}

// ReLU on/off state of every block output and the max-out winners of every
// fusion point. Equal patterns at x - h, x and x + h mean the central
// difference does not straddle a kink.
std::vector<std::uint8_t> activation_pattern(const model::Trace<T>& trace) {
  std::vector<std::uint8_t> bits;
  for (const auto& b : trace.blocks) {
    for (T v : b.output.values()) bits.push_back(v > 0);
  }
  for (T v : trace.pool_relu.values()) bits.push_back(v > 0);
  for (const auto* fc : {&trace.fuse_trunk, &trace.fuse_skip, &trace.fuse_encoder}) {
    if (fc->aligned.empty()) continue;
    for (std::size_t i = 0; i < fc->aligned[0].size(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < fc->aligned.size(); ++k) {
        if (fc->aligned[k][i] > fc->aligned[best][i]) best = k;
      }
      bits.push_back(static_cast<std::uint8_t>(best));
    }
  }
  return bits;
}

struct LossEval {
  double loss = 0.0;
  std::vector<std::uint8_t> pattern;
};

LossEval total_loss_value(model::Network<T>& net, const Tn& images,
                          const std::vector<BinaryMask>& masks, const mafa::MafaConfig& mcfg,
                          std::uint64_t dropout_seed) {
  Rng drop(dropout_seed);
  model::ForwardOptions fo;
  fo.dropout_keep = 0.5;
  fo.rng = &drop;
  model::Trace<T> trace;
  // Running statistics are irrelevant to the train-mode loss.
  const auto out = net.forward(images, mcfg, nn::Mode::Train, fo, &trace);
  std::vector<Tn> seg_gt;
  std::vector<Tn> contour_gt;
  for (const auto& m : masks) {
    seg_gt.push_back(contour::one_hot<T>(m));
    contour_gt.push_back(contour::extract_contour_gt<T>(m));
  }
  const double ls = contour::cross_entropy_seg_loss(out.seg, stack_batch<T>(seg_gt)).loss;
  const double lc = contour::dice_contour_loss(out.contour, stack_batch<T>(contour_gt)).loss;
  return {contour::total_loss(ls, lc), activation_pattern(trace)};
}

double end_to_end_check(Rng& rng, double p, double h, int sampled, const mafa::MafaConfig& mcfg) {
  model::ModelConfig cfg;
  cfg.input_size = 16;
  cfg.encoder_widths = {3, 4, 4};
  cfg.aspp_channels = 4;
  cfg.skip_channels = 2;
  cfg.decoder_widths = {4, 4};
  model::Network<T> net(cfg, rng.next_u64());
  // Nudge batchnorm affine terms off their defaults so every path is exercised.
  for (auto& prm : net.params()) {
    if (prm.trainable && prm.name.find(".bn.") != std::string::npos) {
      for (auto& v : prm.value.values()) v += 0.1 * rng.normal();
    }
  }
  Tn images(2, cfg.input_size, cfg.input_size, 3);
  for (auto& v : images.values()) v = rng.uniform();
  std::vector<BinaryMask> masks;
  for (int n = 0; n < 2; ++n) {
    BinaryMask m(cfg.input_size, cfg.input_size);
    const int y0 = 2 + static_cast<int>(rng.below(6));
    const int x0 = 2 + static_cast<int>(rng.below(6));
    for (int y = y0; y < y0 + 7; ++y) {
      for (int x = x0; x < x0 + 6; ++x) m.at(y, x) = 1;
    }
    masks.push_back(m);
  }
  const std::uint64_t dropout_seed = rng.next_u64();
  Rng drop(dropout_seed);
  model::ForwardOptions fo;
  fo.dropout_keep = 0.5;
  fo.rng = &drop;
  compute_gradients<T>(net, images, masks, mcfg, true, 3, fo);

  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    if (net.params()[i].trainable) trainable.push_back(i);
  }
  const auto base = total_loss_value(net, images, masks, mcfg, dropout_seed).pattern;
  double worst = 0.0;
  int checked = 0;
  // Elements whose stencil crosses a kink are redrawn.
  for (int attempt = 0; checked < sampled && attempt < 20 * sampled; ++attempt) {
    const std::size_t pi = trainable[rng.below(trainable.size())];
    auto& prm = net.params()[pi];
    const std::size_t ei = rng.below(prm.value.size());
    const double analytic = prm.grad[ei] * p;
    const double keep = prm.value[ei];
    prm.value[ei] = keep + h;
    const auto up = total_loss_value(net, images, masks, mcfg, dropout_seed);
    prm.value[ei] = keep - h;
    const auto down = total_loss_value(net, images, masks, mcfg, dropout_seed);
    prm.value[ei] = keep;
    if (up.pattern != base || down.pattern != base) continue;
    worst = std::max(worst, rel_err(analytic, (up.loss - down.loss) / (2.0 * h)));
    ++checked;
  }
  if (checked < sampled) return std::numeric_limits<double>::infinity();
  return worst;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& opts) {
  Registry reg{opts, {}};
  const double h = opts.h;

  reg.run("conv2d", kOpTolerance, [&](Rng& r, double p) { return conv_check(r, p, h, {1, 1}, false); });
  reg.run("conv2d_stride2", kOpTolerance, [&](Rng& r, double p) { return conv_check(r, p, h, {2, 1}, false); });
  reg.run("conv2d_dilation2", kOpTolerance, [&](Rng& r, double p) { return conv_check(r, p, h, {1, 2}, false); });
  reg.run("depthwise_conv2d", kOpTolerance, [&](Rng& r, double p) { return conv_check(r, p, h, {1, 1}, true); });

  reg.run("depthwise_separable_conv", kOpTolerance, [&](Rng& rng, double p) {
    Tn x = random_tensor({1, 5, 5, 3}, rng);
    Tn dw = random_tensor({3, 3, 3, 1}, rng);
    Tn pw = random_tensor({1, 1, 3, 2}, rng);
    const Tn r = random_tensor({1, 5, 5, 2}, rng);
    const Tn mid = nn::depthwise_conv2d(x, dw, {});
    Tn gmid;
    Tn gpw(pw.shape());
    nn::conv2d_backward(mid, pw, {}, r, &gmid, &gpw);
    Tn gx;
    Tn gdw(dw.shape());
    nn::depthwise_conv2d_backward(x, dw, {}, gmid, &gx, &gdw);
    auto f = [&] { return dot(nn::depthwise_separable_conv(x, dw, pw, 1), r); };
    return std::max({check_input(x, gx, f, h, p), check_input(dw, gdw, f, h, p),
                     check_input(pw, gpw, f, h, p)});
  });

  reg.run("add_bias", kOpTolerance, [&](Rng& rng, double p) {
    const Tn x = random_tensor({2, 3, 3, 4}, rng);
    Tn b = random_tensor({1, 1, 1, 4}, rng);
    const Tn r = random_tensor(x.shape(), rng);
    Tn gb(b.shape());
    nn::add_bias_backward(r, &gb);
    return check_input(b, gb, [&] { return dot(nn::add_bias(x, b), r); }, h, p);
  });

  reg.run("batchnorm", kOpTolerance, [&](Rng& rng, double p) {
    Tn x = random_tensor({2, 3, 3, 3}, rng);
    Tn scale = random_tensor({1, 1, 1, 3}, rng);
    Tn shift = random_tensor({1, 1, 1, 3}, rng);
    const Tn r = random_tensor(x.shape(), rng);
    auto fwd = [&](nn::BatchNormCache<T>* cache) {
      Tn mean(1, 1, 1, 3);
      Tn var(1, 1, 1, 3, 1.0);
      return nn::batchnorm(x, scale, shift, mean, var, nn::Mode::Train, 0.9, 1e-5, cache);
    };
    nn::BatchNormCache<T> cache;
    fwd(&cache);
    Tn gs(scale.shape());
    Tn gb(shift.shape());
    const Tn gx = nn::batchnorm_backward(cache, scale, r, &gs, &gb);
    auto f = [&] { return dot(fwd(nullptr), r); };
    return std::max({check_input(x, gx, f, h, p), check_input(scale, gs, f, h, p),
                     check_input(shift, gb, f, h, p)});
  });

  reg.run("relu", kOpTolerance, [&](Rng& rng, double p) {
    Tn x = random_tensor({1, 4, 4, 2}, rng);
    push_from_zero(x, 1e-3);
    const Tn r = random_tensor(x.shape(), rng);
    const Tn gx = nn::relu_backward(nn::relu(x), r);
    return check_input(x, gx, [&] { return dot(nn::relu(x), r); }, h, p);
  });

  reg.run("softmax_pair", kOpTolerance, [&](Rng& rng, double p) {
    Tn x = random_tensor({1, 3, 3, 4}, rng, 2.0);
    const Tn r = random_tensor(x.shape(), rng);
    auto fwd = [&] { return nn::softmax_pair(nn::softmax_pair(x, 0), 2); };
    const Tn probs = fwd();
    const Tn gx = nn::softmax_pair_backward(probs, nn::softmax_pair_backward(probs, r, 2), 0);
    return check_input(x, gx, [&] { return dot(fwd(), r); }, h, p);
  });

  reg.run("bilinear_resize", kOpTolerance, [&](Rng& rng, double p) {
    Tn x = random_tensor({2, 3, 4, 2}, rng);
    const int oh = 3 + static_cast<int>(rng.below(6));
    const int ow = 3 + static_cast<int>(rng.below(6));
    const Tn r = random_tensor({2, oh, ow, 2}, rng);
    const Tn gx = nn::bilinear_resize_backward(r, 3, 4);
    return check_input(x, gx, [&] { return dot(nn::bilinear_resize(x, oh, ow), r); }, h, p);
  });

  reg.run("dropout", kOpTolerance, [&](Rng& rng, double p) {
    Tn x = random_tensor({1, 4, 4, 3}, rng);
    const Tn r = random_tensor(x.shape(), rng);
    const std::uint64_t seed = rng.next_u64();
    auto fwd = [&](Tn* mask) {
      Rng d(seed);
      return nn::dropout(x, 0.5, d, nn::Mode::Train, mask);
    };
    Tn mask;
    fwd(&mask);
    Tn gx(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = r[i] * mask[i];
    return check_input(x, gx, [&] { return dot(fwd(nullptr), r); }, h, p);
  });

  reg.run("global_avg_pool", kOpTolerance, [&](Rng& rng, double p) {
    Tn x = random_tensor({2, 3, 5, 2}, rng);
    const Tn r = random_tensor({2, 1, 1, 2}, rng);
    const Tn gx = nn::global_avg_pool_backward(r, 3, 5);
    return check_input(x, gx, [&] { return dot(nn::global_avg_pool(x), r); }, h, p);
  });

  reg.run("rotate_bilinear", kOpTolerance, [&](Rng& rng, double p) {
    Tn x = random_tensor({1, 6, 6, 2}, rng);
    const geometry::Angle a(rng.uniform(0.0, 360.0));
    const Tn r = random_tensor(x.shape(), rng);
    const Tn gx = geometry::rotate_adjoint(r, a, geometry::RotationMode::Bilinear);
    return check_input(
        x, gx, [&] { return dot(geometry::rotate(x, a, geometry::RotationMode::Bilinear), r); }, h, p);
  });

  for (auto mode : {mafa::Aggregation::Mean, mafa::Aggregation::MaxOut}) {
    reg.run("aggregate_" + mafa::to_string(mode), kOpTolerance, [&, mode](Rng& rng, double p) {
      std::vector<Tn> maps;
      for (int k = 0; k < 4; ++k) maps.push_back(random_tensor({1, 3, 3, 2}, rng));
      const Tn r = random_tensor(maps[0].shape(), rng);
      const auto grads = mafa::aggregate_backward<T>(maps, r, mode);
      double worst = 0.0;
      for (int k = 0; k < 4; ++k) {
        worst = std::max(worst, check_input(maps[k], grads[k],
                                            [&] { return dot(mafa::aggregate<T>(maps, mode), r); },
                                            h, p));
      }
      return worst;
    });
  }

  reg.run("dice_contour_loss", kOpTolerance, [&](Rng& rng, double p) {
    Tn logits = random_tensor({2, 4, 4, 2}, rng);
    Tn gt(logits.shape());
    for (std::size_t i = 0; i < gt.size(); i += 2) {
      const bool on = rng.bernoulli(0.3);
      gt[i] = on ? 0 : 1;
      gt[i + 1] = on ? 1 : 0;
    }
    auto probs = [&] { return nn::softmax_pair(logits, 0); };
    const Tn pr = probs();
    const auto res = contour::dice_contour_loss(pr, gt);
    const Tn gx = nn::softmax_pair_backward(pr, res.grad, 0);
    return check_input(logits, gx, [&] { return static_cast<double>(contour::dice_contour_loss(probs(), gt).loss); }, h, p);
  });

  reg.run("cross_entropy_seg_loss", kOpTolerance, [&](Rng& rng, double p) {
    Tn logits = random_tensor({2, 4, 4, 2}, rng);
    Tn gt(logits.shape());
    for (std::size_t i = 0; i < gt.size(); i += 2) {
      const bool on = rng.bernoulli(0.5);
      gt[i] = on ? 0 : 1;
      gt[i + 1] = on ? 1 : 0;
    }
    const auto res = contour::cross_entropy_seg_loss(nn::softmax_pair(logits, 0), gt);
    return check_input(logits, res.grad, [&] {
      return static_cast<double>(contour::cross_entropy_seg_loss(nn::softmax_pair(logits, 0), gt).loss);
    }, h, p);
  });

  if (opts.end_to_end) {
    struct Variant {
      const char* name;
      mafa::MafaConfig cfg;
    };
    std::vector<Variant> variants;
    variants.push_back({"end_to_end_plain", {}});
    mafa::MafaConfig enc;
    enc.n_angles = 4;
    variants.push_back({"end_to_end_mafa4", enc});
    mafa::MafaConfig maxout = enc;
    maxout.aggregation = mafa::Aggregation::MaxOut;
    variants.push_back({"end_to_end_mafa4_maxout", maxout});
    mafa::MafaConfig mid = enc;
    mid.placement = mafa::Placement::BackboneMid;
    variants.push_back({"end_to_end_mafa4_mid", mid});
    mafa::MafaConfig last = enc;
    last.placement = mafa::Placement::BackboneLast;
    variants.push_back({"end_to_end_mafa4_last", last});
    mafa::MafaConfig bil;
    bil.n_angles = 3;
    bil.rotation_mode = geometry::RotationMode::Bilinear;
    variants.push_back({"end_to_end_mafa3_bilinear", bil});
    for (const auto& v : variants) {
      reg.run(v.name, kEndToEndTolerance, [&, cfg = v.cfg](Rng& rng, double p) {
        return end_to_end_check(rng, p, h, opts.sampled_params, cfg);
      });
    }
  }
  return reg.results;
}

std::string format_gradcheck(const std::vector<GradCheckResult>& results) {
  std::string out = "op,max_rel_err,pass\n";
  char buf[160];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s,%.3e,%s\n", r.op.c_str(), r.max_rel_err,
                  r.pass ? "true" : "false");
    out += buf;
  }
  return out;
}

}  // namespace mafaseg
