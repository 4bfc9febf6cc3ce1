#pragma once

#include <vector>

#include "mafaseg/tensor.hpp"

namespace mafaseg::geometry {

/// Rotation angle in degrees, normalized to [0, 360).
class Angle {
 public:
  constexpr Angle() = default;
  explicit Angle(double degrees);

  double degrees() const { return degrees_; }
  double radians() const;
  bool is_quarter() const;
  /// 0..3 for quarter angles; throws otherwise.
  int quarter_turns() const;
  /// Exact for quarter angles.
  double sin() const;
  double cos() const;

  Angle operator-() const { return Angle(-degrees_); }
  bool operator==(const Angle&) const = default;

 private:
  double degrees_ = 0.0;
};

enum class RotationMode { ExactQuarter, Bilinear };

/// Maps an output pixel coordinate (row, col) to a source coordinate:
/// src_row = rr * row + rc * col + r0, src_col = cr * row + cc * col + c0.
struct Affine {
  double rr = 1, rc = 0, r0 = 0;
  double cr = 0, cc = 1, c0 = 0;

  static Affine identity() { return {}; }
  /// Source mapping that rotates content counterclockwise (as displayed with
  /// row 0 on top) by `angle` about the continuous grid center.
  static Affine rotation(int height, int width, Angle angle);
  /// Composition: sample `inner` at the coordinates produced by `*this`.
  Affine then(const Affine& inner) const;
};

/// Bilinear resampling; samples outside the grid contribute zero. Terms with
/// zero weight are skipped so integer source coordinates copy values exactly.
template <typename T>
Tensor<T> warp_bilinear(const Tensor<T>& src, const Affine& map);

/// Transpose of warp_bilinear with respect to its input values.
template <typename T>
Tensor<T> warp_bilinear_adjoint(const Tensor<T>& grad_out, const Affine& map);

/// Nearest-neighbour resampling of a mask; outside the grid is background.
BinaryMask warp_nearest(const BinaryMask& src, const Affine& map);

/// Rotates every batch item about its own center ((H-1)/2, (W-1)/2).
/// Exact-quarter mode is a pure index permutation and requires a square map
/// and angle in {0, 90, 180, 270}.
template <typename T>
Tensor<T> rotate(const Tensor<T>& map, Angle angle, RotationMode mode);

/// Undoes rotate: align(m, a, mode) == rotate(m, -a, mode).
template <typename T>
Tensor<T> align(const Tensor<T>& map, Angle angle, RotationMode mode);

/// Transpose of rotate (used to backpropagate through align). Equal to the
/// inverse rotation in exact-quarter mode.
template <typename T>
Tensor<T> rotate_adjoint(const Tensor<T>& grad_out, Angle angle, RotationMode mode);

/// Nearest-neighbour mask rotation (keeps the mask binary).
BinaryMask rotate_mask(const BinaryMask& mask, Angle angle);

/// Equally spaced angles 360 * (k - 1) / n for k = 1..n.
std::vector<Angle> angle_set(int n);

/// Disc about the grid center of radius (min(H, W) - 1) / 2 - margin. Inside
/// it, rotation never samples outside the grid.
BinaryMask safe_disc_mask(int height, int width, double margin);

}  // namespace mafaseg::geometry
