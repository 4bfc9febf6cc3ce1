#include "mafaseg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mafaseg::metrics {

namespace {

void check_same(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": mask shapes differ (" +
                                std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                                std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

struct Counts {
  std::size_t inter = 0;
  std::size_t uni = 0;
  std::size_t pred = 0;
  std::size_t gt = 0;
};

Counts count(const BinaryMask& pred, const BinaryMask& gt, const BinaryMask* band) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (band && !band->bits[i]) continue;
    const bool p = pred.bits[i] != 0;
    const bool g = gt.bits[i] != 0;
    c.inter += p && g;
    c.uni += p || g;
    c.pred += p;
    c.gt += g;
  }
  return c;
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

nlohmann::ordered_json summary_object(const Summary& s, bool rounded) {
  auto r = [&](double v) { return rounded ? round4(v) : v; };
  return {{"count", s.count},         {"mdsc", r(s.mdsc)},         {"miou", r(s.miou)},
          {"mrm_iou", r(s.mrm_iou)}, {"mrsd_iou", r(s.mrsd_iou)}, {"miou_nb", r(s.miou_nb)}};
}

}  // namespace

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt, "iou");
  const Counts c = count(pred, gt, nullptr);
  return c.uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.uni);
}

double dsc(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt, "dsc");
  const Counts c = count(pred, gt, nullptr);
  const std::size_t denom = c.pred + c.gt;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.inter) / static_cast<double>(denom);
}

std::vector<geometry::Angle> evaluation_angles() { return geometry::angle_set(6); }

RotationalStats rotational_stats(std::span<const double> ious) {
  if (ious.empty()) throw std::invalid_argument("rotational_stats: no values");
  RotationalStats s;
  s.per_angle.assign(ious.begin(), ious.end());
  double sum = 0.0;
  for (double v : ious) sum += v;
  s.rm = sum / static_cast<double>(ious.size());
  double sq = 0.0;
  for (double v : ious) sq += (v - s.rm) * (v - s.rm);
  s.rsd = std::sqrt(sq / static_cast<double>(ious.size()));
  return s;
}

RotationalStats rotational_iou_stats(const InferFn& infer, const RasterMap& image,
                                     const BinaryMask& gt,
                                     std::span<const geometry::Angle> angles) {
  std::vector<double> values;
  values.reserve(angles.size());
  for (const auto& a : angles) {
    const RasterMap rotated = geometry::rotate(image, a, geometry::RotationMode::Bilinear);
    values.push_back(iou(infer(rotated), geometry::rotate_mask(gt, a)));
  }
  return rotational_stats(values);
}

RotationalStats rotational_iou_stats(const InferFn& infer, const RasterMap& image,
                                     const BinaryMask& gt) {
  const auto angles = evaluation_angles();
  return rotational_iou_stats(infer, image, gt, angles);
}

BinaryMask boundary_pixels(const BinaryMask& gt) {
  BinaryMask out(gt.height, gt.width);
  for (int y = 0; y < gt.height; ++y) {
    for (int x = 0; x < gt.width; ++x) {
      if (!gt.at(y, x)) continue;
      const bool edge = (y > 0 && !gt.at(y - 1, x)) || (y + 1 < gt.height && !gt.at(y + 1, x)) ||
                        (x > 0 && !gt.at(y, x - 1)) || (x + 1 < gt.width && !gt.at(y, x + 1));
      out.at(y, x) = edge ? 1 : 0;
    }
  }
  return out;
}

BinaryMask near_boundary_band(const BinaryMask& gt, int half_width) {
  if (half_width < 0) throw std::invalid_argument("near_boundary_band: half_width must be >= 0");
  const BinaryMask edge = boundary_pixels(gt);
  std::vector<std::pair<int, int>> disc;
  const int r2 = half_width * half_width;
  for (int dy = -half_width; dy <= half_width; ++dy) {
    for (int dx = -half_width; dx <= half_width; ++dx) {
      if (dy * dy + dx * dx <= r2) disc.emplace_back(dy, dx);
    }
  }
  BinaryMask band(gt.height, gt.width);
  for (int y = 0; y < gt.height; ++y) {
    for (int x = 0; x < gt.width; ++x) {
      if (!edge.at(y, x)) continue;
      for (auto [dy, dx] : disc) {
        const int yy = y + dy;
        const int xx = x + dx;
        if (yy >= 0 && yy < gt.height && xx >= 0 && xx < gt.width) band.at(yy, xx) = 1;
      }
    }
  }
  return band;
}

double iou_nb(const BinaryMask& pred, const BinaryMask& gt, const BinaryMask& band) {
  check_same(pred, gt, "iou_nb");
  check_same(pred, band, "iou_nb");
  const Counts c = count(pred, gt, &band);
  return c.uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.uni);
}

Summary dataset_summary(std::span<const MetricsRecord> records) {
  if (records.empty()) throw std::invalid_argument("dataset_summary: no records");
  Summary s;
  s.count = records.size();
  for (const auto& r : records) {
    s.mdsc += r.dsc;
    s.miou += r.iou;
    s.mrm_iou += r.rm_iou;
    s.mrsd_iou += r.rsd_iou;
    s.miou_nb += r.iou_nb;
  }
  const double n = static_cast<double>(records.size());
  s.mdsc /= n;
  s.miou /= n;
  s.mrm_iou /= n;
  s.mrsd_iou /= n;
  s.miou_nb /= n;
  return s;
}

FoldStatistics fold_statistics(std::span<const Summary> folds) {
  if (folds.empty()) throw std::invalid_argument("fold_statistics: no folds");
  FoldStatistics st;
  st.folds.assign(folds.begin(), folds.end());
  const double n = static_cast<double>(folds.size());
  auto field = [&](double Summary::*m) {
    double sum = 0.0;
    for (const auto& f : folds) sum += f.*m;
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& f : folds) sq += (f.*m - mean) * (f.*m - mean);
    st.mean.*m = mean;
    st.stdev.*m = std::sqrt(sq / n);
  };
  field(&Summary::mdsc);
  field(&Summary::miou);
  field(&Summary::mrm_iou);
  field(&Summary::mrsd_iou);
  field(&Summary::miou_nb);
  for (const auto& f : folds) st.mean.count += f.count;
  st.stdev.count = 0;
  return st;
}

void write_csv(std::ostream& out, std::span<const MetricsRecord> records) {
  out << "id,dsc,iou,rm_iou,rsd_iou,iou_nb\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& r : records) {
    out << r.id << ',' << r.dsc << ',' << r.iou << ',' << r.rm_iou << ',' << r.rsd_iou << ','
        << r.iou_nb << '\n';
  }
}

std::string summary_json(const Summary& summary, const FoldStatistics* folds) {
  nlohmann::ordered_json j = summary_object(summary, true);
  if (folds) {
    nlohmann::ordered_json f;
    f["k"] = folds->folds.size();
    f["mean"] = summary_object(folds->mean, true);
    f["stdev"] = summary_object(folds->stdev, true);
    f["folds"] = nlohmann::ordered_json::array();
    for (const auto& s : folds->folds) f["folds"].push_back(summary_object(s, true));
    j["kfold"] = std::move(f);
  }
  return j.dump(2) + "\n";
}

}  // namespace mafaseg::metrics
