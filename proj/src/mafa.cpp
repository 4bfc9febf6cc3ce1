#include "mafaseg/mafa.hpp"

#include <stdexcept>

#include "mafaseg/parallel.hpp"

namespace mafaseg::mafa {

using geometry::RotationMode;

void MafaConfig::validate() const {
  if (n_angles < 1) throw std::invalid_argument("MafaConfig: n_angles must be >= 1");
  if (rotation_mode == RotationMode::ExactQuarter && n_angles != 1 && n_angles != 2 &&
      n_angles != 4) {
    throw std::invalid_argument("MafaConfig: exact-quarter rotation needs n_angles in {1, 2, 4}, got " +
                                std::to_string(n_angles));
  }
}

std::string to_string(Aggregation a) { return a == Aggregation::Mean ? "mean" : "max-out"; }

std::string to_string(Placement p) {
  switch (p) {
    case Placement::EncoderOutput: return "encoder-output";
    case Placement::BackboneMid: return "backbone-mid";
    case Placement::BackboneLast: return "backbone-last";
  }
  return "?";
}

std::string to_string(RotationMode m) {
  return m == RotationMode::ExactQuarter ? "exact-quarter" : "bilinear";
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::Mean;
  if (s == "max-out" || s == "maxout" || s == "max") return Aggregation::MaxOut;
  throw std::invalid_argument("unknown aggregation '" + s + "' (mean | max-out)");
}

Placement parse_placement(const std::string& s) {
  if (s == "encoder-output") return Placement::EncoderOutput;
  if (s == "backbone-mid" || s == "mid") return Placement::BackboneMid;
  if (s == "backbone-last" || s == "last") return Placement::BackboneLast;
  throw std::invalid_argument("unknown placement '" + s +
                              "' (encoder-output | backbone-mid | backbone-last)");
}

RotationMode parse_rotation_mode(const std::string& s) {
  if (s == "exact-quarter" || s == "exact") return RotationMode::ExactQuarter;
  if (s == "bilinear") return RotationMode::Bilinear;
  throw std::invalid_argument("unknown rotation mode '" + s + "' (exact-quarter | bilinear)");
}

template <typename T>
std::vector<Tensor<T>> mafa_features(const Tensor<T>& image, const MapFn<T>& encoder,
                                     const MafaConfig& cfg) {
  cfg.validate();
  const auto angles = cfg.angles();
  std::vector<Tensor<T>> out(angles.size());
  parallel_for(angles.size(), [&](std::size_t k) {
    const Tensor<T> rotated = geometry::rotate(image, angles[k], cfg.rotation_mode);
    Tensor<T> features = encoder(rotated);
    if (cfg.rotation_mode == RotationMode::ExactQuarter && angles[k].degrees() != 0.0 &&
        features.height() != features.width()) {
      throw std::invalid_argument("mafa_features: exact-quarter alignment needs a square feature map, got " +
                                  features.shape().str());
    }
    out[k] = geometry::align(features, angles[k], cfg.rotation_mode);
  });
  return out;
}

template <typename T>
Tensor<T> aggregate(std::span<const Tensor<T>> maps, Aggregation mode) {
  if (maps.empty()) throw std::invalid_argument("aggregate: empty map list");
  const Shape& s = maps.front().shape();
  for (const auto& m : maps) {
    if (!(m.shape() == s)) {
      throw std::invalid_argument("aggregate: shape mismatch " + m.shape().str() + " vs " + s.str());
    }
  }
  Tensor<T> out = maps.front();
  if (mode == Aggregation::MaxOut) {
    for (std::size_t k = 1; k < maps.size(); ++k) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (maps[k][i] > out[i]) out[i] = maps[k][i];
      }
    }
    return out;
  }
  for (std::size_t k = 1; k < maps.size(); ++k) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += maps[k][i];
  }
  if (maps.size() > 1) {
    const T n = static_cast<T>(maps.size());
    for (auto& v : out.values()) v /= n;
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> aggregate_backward(std::span<const Tensor<T>> maps,
                                          const Tensor<T>& grad_out, Aggregation mode) {
  if (maps.empty()) throw std::invalid_argument("aggregate_backward: empty map list");
  std::vector<Tensor<T>> grads;
  grads.reserve(maps.size());
  if (mode == Aggregation::Mean) {
    const T n = static_cast<T>(maps.size());
    Tensor<T> g = grad_out;
    if (maps.size() > 1) {
      for (auto& v : g.values()) v /= n;
    }
    grads.assign(maps.size(), g);
    return grads;
  }
  for (std::size_t k = 0; k < maps.size(); ++k) grads.emplace_back(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < maps.size(); ++k) {
      if (maps[k][i] > maps[best][i]) best = k;
    }
    grads[best][i] = grad_out[i];
  }
  return grads;
}

template <typename T>
std::vector<Tensor<T>> aggregate_multiscale(const std::vector<std::vector<Tensor<T>>>& maps,
                                            Aggregation mode) {
  if (maps.empty()) throw std::invalid_argument("aggregate_multiscale: no angles");
  const std::size_t scales = maps.front().size();
  for (const auto& per_angle : maps) {
    if (per_angle.size() != scales) {
      throw std::invalid_argument("aggregate_multiscale: every angle needs the same scale count");
    }
  }
  std::vector<Tensor<T>> fused;
  fused.reserve(scales);
  for (std::size_t s = 0; s < scales; ++s) {
    std::vector<Tensor<T>> column;
    column.reserve(maps.size());
    for (const auto& per_angle : maps) column.push_back(per_angle[s]);
    fused.push_back(aggregate<T>(column, mode));
  }
  return fused;
}

template <typename T>
Tensor<T> ensemble_predict(const Tensor<T>& image, const MapFn<T>& model,
                           std::span<const geometry::Angle> angles, RotationMode mode) {
  if (angles.empty()) throw std::invalid_argument("ensemble_predict: no angles");
  std::vector<Tensor<T>> aligned(angles.size());
  parallel_for(angles.size(), [&](std::size_t k) {
    const Tensor<T> rotated = geometry::rotate(image, angles[k], mode);
    aligned[k] = geometry::align(model(rotated), angles[k], mode);
  });
  return aggregate<T>(aligned, Aggregation::Mean);
}

#define MAFASEG_INSTANTIATE(T)                                                                 \
  template std::vector<Tensor<T>> mafa_features(const Tensor<T>&, const MapFn<T>&,             \
                                                const MafaConfig&);                            \
  template Tensor<T> aggregate(std::span<const Tensor<T>>, Aggregation);                       \
  template std::vector<Tensor<T>> aggregate_backward(std::span<const Tensor<T>>,               \
                                                     const Tensor<T>&, Aggregation);           \
  template std::vector<Tensor<T>> aggregate_multiscale(                                        \
      const std::vector<std::vector<Tensor<T>>>&, Aggregation);                                \
  template Tensor<T> ensemble_predict(const Tensor<T>&, const MapFn<T>&,                       \
                                      std::span<const geometry::Angle>, RotationMode);

MAFASEG_INSTANTIATE(float)
MAFASEG_INSTANTIATE(double)
#undef MAFASEG_INSTANTIATE

}  // namespace mafaseg::mafa
