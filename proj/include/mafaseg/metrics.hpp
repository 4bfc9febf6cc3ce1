#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mafaseg/geometry.hpp"
#include "mafaseg/tensor.hpp"

namespace mafaseg::metrics {

/// |S n G| / |S u G|; 1 when both masks are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);
/// 2 |S n G| / (|S| + |G|); 1 when both masks are empty.
double dsc(const BinaryMask& pred, const BinaryMask& gt);

/// The six evaluation rotations 0, 60, ..., 300 degrees.
std::vector<geometry::Angle> evaluation_angles();

using InferFn = std::function<BinaryMask(const RasterMap&)>;

struct RotationalStats {
  std::vector<double> per_angle;
  double rm = 0.0;
  double rsd = 0.0;
};

/// Mean and population standard deviation of a set of IOU values.
RotationalStats rotational_stats(std::span<const double> ious);

/// IOU(infer(rotate(image, a, bilinear)), rotate_mask(gt, a)) for each angle.
RotationalStats rotational_iou_stats(const InferFn& infer, const RasterMap& image,
                                     const BinaryMask& gt,
                                     std::span<const geometry::Angle> angles);
RotationalStats rotational_iou_stats(const InferFn& infer, const RasterMap& image,
                                     const BinaryMask& gt);

/// Foreground pixels with a 4-neighbour in the background. Pixels past the
/// grid edge are not counted as background here.
BinaryMask boundary_pixels(const BinaryMask& gt);

/// Pixels on either side within Euclidean distance half_width of the gt
/// boundary.
BinaryMask near_boundary_band(const BinaryMask& gt, int half_width = 10);

/// IOU restricted to the band; 1 when (S u G) n B is empty.
double iou_nb(const BinaryMask& pred, const BinaryMask& gt, const BinaryMask& band);

struct MetricsRecord {
  std::string id;
  double dsc = 0.0;
  double iou = 0.0;
  double rm_iou = 0.0;
  double rsd_iou = 0.0;
  double iou_nb = 0.0;
};

struct Summary {
  std::size_t count = 0;
  double mdsc = 0.0;
  double miou = 0.0;
  double mrm_iou = 0.0;
  double mrsd_iou = 0.0;
  double miou_nb = 0.0;
};

Summary dataset_summary(std::span<const MetricsRecord> records);

/// Mean and population standard deviation of each metric over fold summaries.
struct FoldStatistics {
  Summary mean;
  Summary stdev;
  std::vector<Summary> folds;
};
FoldStatistics fold_statistics(std::span<const Summary> folds);

/// Header `id,dsc,iou,rm_iou,rsd_iou,iou_nb`, LF line endings.
void write_csv(std::ostream& out, std::span<const MetricsRecord> records);
/// Dataset means (4 decimals) plus optional fold statistics.
std::string summary_json(const Summary& summary, const FoldStatistics* folds = nullptr);

}  // namespace mafaseg::metrics
