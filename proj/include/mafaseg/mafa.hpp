#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mafaseg/geometry.hpp"
#include "mafaseg/tensor.hpp"

namespace mafaseg::mafa {

enum class Aggregation { Mean, MaxOut };

/// Where the multi-angle maps are aligned and fused. EncoderOutput runs the
/// whole encoder (backbone, ASPP, skip concat) per angle; the two backbone
/// placements fuse earlier and exist to reproduce the placement ablation.
enum class Placement { EncoderOutput, BackboneMid, BackboneLast };

struct MafaConfig {
  int n_angles = 1;
  Aggregation aggregation = Aggregation::Mean;
  geometry::RotationMode rotation_mode = geometry::RotationMode::ExactQuarter;
  Placement placement = Placement::EncoderOutput;

  /// Throws std::invalid_argument when n_angles < 1 or exact-quarter mode is
  /// combined with an angle count outside {1, 2, 4}.
  void validate() const;
  std::vector<geometry::Angle> angles() const { return geometry::angle_set(n_angles); }
  bool enabled() const { return n_angles > 1; }
};

std::string to_string(Aggregation a);
std::string to_string(Placement p);
std::string to_string(geometry::RotationMode m);
Aggregation parse_aggregation(const std::string& s);
Placement parse_placement(const std::string& s);
geometry::RotationMode parse_rotation_mode(const std::string& s);

template <typename T>
using MapFn = std::function<Tensor<T>(const Tensor<T>&)>;

/// Rotated-encode-aligned maps, one per angle k = 1..N_A:
/// align(encoder(rotate(image, phi_k)), phi_k). The passes run through
/// parallel_for; `encoder` must be safe to call concurrently.
template <typename T>
std::vector<Tensor<T>> mafa_features(const Tensor<T>& image, const MapFn<T>& encoder,
                                     const MafaConfig& cfg);

/// Elementwise mean (summed in ascending k, then divided by the count) or
/// elementwise maximum.
template <typename T>
Tensor<T> aggregate(std::span<const Tensor<T>> maps, Aggregation mode);

/// Gradient of aggregate with respect to each input map. Max-out routes the
/// gradient to the lowest k attaining the maximum.
template <typename T>
std::vector<Tensor<T>> aggregate_backward(std::span<const Tensor<T>> maps,
                                          const Tensor<T>& grad_out, Aggregation mode);

/// Per-scale aggregation for encoders with several output maps:
/// maps[k][s] is scale s of angle k; the result holds one fused map per scale.
template <typename T>
std::vector<Tensor<T>> aggregate_multiscale(const std::vector<std::vector<Tensor<T>>>& maps,
                                            Aggregation mode);

/// Multi-angle ensemble: mean over k of align(model(rotate(image, phi_k)), phi_k)
/// applied to the model's output probability map.
template <typename T>
Tensor<T> ensemble_predict(const Tensor<T>& image, const MapFn<T>& model,
                           std::span<const geometry::Angle> angles,
                           geometry::RotationMode mode);

}  // namespace mafaseg::mafa
