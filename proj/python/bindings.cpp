// Python bindings: numpy arrays in, numpy arrays out.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <sstream>

#include "mafaseg/config.hpp"
#include "mafaseg/contour.hpp"
#include "mafaseg/data.hpp"
#include "mafaseg/geometry.hpp"
#include "mafaseg/gradcheck.hpp"
#include "mafaseg/mafa.hpp"
#include "mafaseg/metrics.hpp"
#include "mafaseg/model.hpp"
#include "mafaseg/parallel.hpp"
#include "mafaseg/params.hpp"
#include "mafaseg/training.hpp"

namespace py = pybind11;
using namespace mafaseg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// (H, W, C) or (N, H, W, C) array to an NHWC tensor.
template <typename T>
Tensor<T> to_tensor(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  Shape s;
  if (a.ndim() == 3) {
    s = {1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
  } else if (a.ndim() == 4) {
    s = {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
         static_cast<int>(a.shape(3))};
  } else {
    throw std::invalid_argument("expected a 3-D (H, W, C) or 4-D (N, H, W, C) array");
  }
  Tensor<T> t(s);
  std::copy(a.data(), a.data() + t.size(), t.values().begin());
  return t;
}

template <typename T>
py::array_t<T> from_tensor(const Tensor<T>& t, bool squeeze) {
  const auto& s = t.shape();
  std::vector<py::ssize_t> shape = {s.n, s.h, s.w, s.c};
  if (squeeze && s.n == 1) shape.erase(shape.begin());
  py::array_t<T> a(shape);
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

BinaryMask to_mask(const MaskArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D (H, W) mask");
  BinaryMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  const auto* p = a.data();
  for (std::size_t i = 0; i < m.size(); ++i) m.bits[i] = p[i] ? 1 : 0;
  return m;
}

MaskArray from_mask(const BinaryMask& m) {
  MaskArray a({m.height, m.width});
  std::copy(m.bits.begin(), m.bits.end(), a.mutable_data());
  return a;
}

mafa::MafaConfig make_mafa(int n_angles, const std::string& aggregation, const std::string& rotation_mode,
                           const std::string& placement) {
  mafa::MafaConfig m;
  m.n_angles = n_angles;
  m.aggregation = mafa::parse_aggregation(aggregation);
  m.rotation_mode = mafa::parse_rotation_mode(rotation_mode);
  m.placement = mafa::parse_placement(placement);
  m.validate();
  return m;
}

py::dict sample_dict(const data::Sample& s) {
  py::dict d;
  d["id"] = s.id;
  d["subset"] = s.subset;
  d["image"] = from_tensor(s.image, true);
  d["mask"] = from_mask(s.mask);
  return d;
}

data::Sample sample_from(const py::handle& h) {
  const auto d = h.cast<py::dict>();
  data::Sample s;
  s.image = to_tensor<float>(d["image"].cast<FloatArray>());
  s.mask = to_mask(d["mask"].cast<MaskArray>());
  s.id = d.contains("id") ? d["id"].cast<std::string>() : "sample";
  s.subset = d.contains("subset") ? d["subset"].cast<std::string>() : "";
  return s;
}

py::dict summary_dict(const metrics::Summary& s) {
  py::dict d;
  d["count"] = s.count;
  d["mdsc"] = s.mdsc;
  d["miou"] = s.miou;
  d["mrm_iou"] = s.mrm_iou;
  d["mrsd_iou"] = s.mrsd_iou;
  d["miou_nb"] = s.miou_nb;
  return d;
}

class Model {
 public:
  Model(const ExperimentConfig& cfg, std::uint64_t seed) : net_(cfg.model, seed), mafa_(cfg.mafa) {}
  Model(model::Network<float> net, mafa::MafaConfig m) : net_(std::move(net)), mafa_(m) {}

  static Model load(const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar) {
    std::ifstream in(sidecar);
    if (!in) throw std::runtime_error("cannot read " + sidecar.string());
    std::stringstream ss;
    ss << in.rdbuf();
    model::ModelConfig mc;
    mafa::MafaConfig mf;
    model::parse_sidecar_json(ss.str(), mc, mf);
    Model m(model::Network<float>(mc, 0), mf);
    AdamState adam;
    load_checkpoint(checkpoint, m.net_.params(), adam);
    return m;
  }

  void save(const std::filesystem::path& checkpoint, const std::filesystem::path& sidecar) const {
    save_checkpoint(checkpoint, net_.params(), AdamState::for_params(net_.params()));
    std::ofstream(sidecar) << model::sidecar_json(net_.config(), mafa_);
  }

  std::vector<py::dict> train(const ExperimentConfig& cfg, const py::list& samples) {
    std::vector<data::Sample> s;
    for (const auto& h : samples) s.push_back(sample_from(h));
    ExperimentConfig c = cfg;
    c.model = net_.config();
    c.mafa = mafa_;
    AdamState adam = AdamState::for_params(net_.params());
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train_model(net_, adam, s, c);
    }
    std::vector<py::dict> rows;
    for (const auto& e : r.epochs) {
      py::dict d;
      d["epoch"] = e.epoch;
      d["seg_loss"] = e.seg_loss;
      d["contour_loss"] = e.contour_loss;
      d["total"] = e.total;
      d["lr"] = e.lr;
      rows.push_back(d);
    }
    return rows;
  }

  InferenceOptions options(bool ensemble, int n_angles, double threshold) const {
    InferenceOptions io;
    io.mafa = mafa_;
    io.threshold = threshold;
    if (ensemble) {
      io.ensemble = true;
      io.mafa = mafa::MafaConfig{};
      io.mafa.n_angles = n_angles;
      io.mafa.rotation_mode = (n_angles == 1 || n_angles == 2 || n_angles == 4)
                                  ? geometry::RotationMode::ExactQuarter
                                  : geometry::RotationMode::Bilinear;
    }
    return io;
  }

  py::array_t<float> predict(const FloatArray& images, bool ensemble, int n_angles) const {
    const auto t = to_tensor<float>(images);
    return from_tensor(predict_seg(net_, t, options(ensemble, n_angles, 0.5)), images.ndim() == 3);
  }

  py::array_t<float> encode(const FloatArray& images) const {
    const auto t = to_tensor<float>(images);
    return from_tensor(net_.infer(t, mafa_).encoder_features, images.ndim() == 3);
  }

  py::dict evaluate(const py::list& samples, bool rotational, int band_half_width, double threshold) const {
    std::vector<data::Sample> s;
    for (const auto& h : samples) s.push_back(sample_from(h));
    EvalOutput ev;
    {
      py::gil_scoped_release release;
      ev = mafaseg::evaluate(net_, s, options(false, 1, threshold), band_half_width, rotational);
    }
    py::dict d = summary_dict(ev.summary);
    py::list recs;
    for (const auto& r : ev.records) {
      py::dict x;
      x["id"] = r.id;
      x["dsc"] = r.dsc;
      x["iou"] = r.iou;
      x["rm_iou"] = r.rm_iou;
      x["rsd_iou"] = r.rsd_iou;
      x["iou_nb"] = r.iou_nb;
      recs.append(x);
    }
    d["records"] = recs;
    return d;
  }

  std::size_t parameter_count() const { return net_.params().trainable_count(); }
  const mafa::MafaConfig& mafa() const { return mafa_; }

 private:
  model::Network<float> net_;
  mafa::MafaConfig mafa_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-angle feature aggregation segmentation";

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &parse_config, py::arg("text"))
      .def_static("load", [](const std::filesystem::path& p) { return load_config(p); }, py::arg("path"))
      .def("set", [](ExperimentConfig& c, const std::string& k, const std::string& v) { set_config_value(c, k, v); },
           py::arg("key"), py::arg("value"))
      .def("validate", &ExperimentConfig::validate)
      .def("format", [](const ExperimentConfig& c) { return format_config(c); })
      .def("__repr__", [](const ExperimentConfig& c) { return format_config(c); });

  // geometry
  m.def("rotate",
        [](const DoubleArray& a, double degrees, const std::string& mode) {
          return from_tensor(geometry::rotate(to_tensor<double>(a), geometry::Angle(degrees),
                                              mafa::parse_rotation_mode(mode)),
                             a.ndim() == 3);
        },
        py::arg("array"), py::arg("degrees"), py::arg("mode") = "exact-quarter",
        "Rotate an (H, W, C) or (N, H, W, C) array counter-clockwise about its center.");
  m.def("align",
        [](const DoubleArray& a, double degrees, const std::string& mode) {
          return from_tensor(geometry::align(to_tensor<double>(a), geometry::Angle(degrees),
                                             mafa::parse_rotation_mode(mode)),
                             a.ndim() == 3);
        },
        py::arg("array"), py::arg("degrees"), py::arg("mode") = "exact-quarter");
  m.def("angle_set", [](int n) {
    std::vector<double> out;
    for (const auto& a : geometry::angle_set(n)) out.push_back(a.degrees());
    return out;
  });

  // mafa
  m.def("aggregate",
        [](const std::vector<DoubleArray>& maps, const std::string& mode) {
          std::vector<Tensor<double>> t;
          for (const auto& a : maps) t.push_back(to_tensor<double>(a));
          return from_tensor(mafa::aggregate<double>(t, mafa::parse_aggregation(mode)), maps.at(0).ndim() == 3);
        },
        py::arg("maps"), py::arg("mode") = "mean");
  m.def("mafa_features",
        [](const DoubleArray& image, const std::function<DoubleArray(DoubleArray)>& encoder, int n_angles,
           const std::string& aggregation, const std::string& rotation_mode) {
          const auto cfg = make_mafa(n_angles, aggregation, rotation_mode, "encoder-output");
          mafa::MapFn<double> fn = [&](const Tensor<double>& x) {
            return to_tensor<double>(encoder(from_tensor(x, false)));
          };
          // The callable holds the GIL, so the passes run on this thread.
          const int threads = thread_count();
          set_thread_count(1);
          std::vector<Tensor<double>> maps;
          try {
            maps = mafa::mafa_features<double>(to_tensor<double>(image), fn, cfg);
          } catch (...) {
            set_thread_count(threads);
            throw;
          }
          set_thread_count(threads);
          return from_tensor(mafa::aggregate<double>(maps, cfg.aggregation), image.ndim() == 3);
        },
        py::arg("image"), py::arg("encoder"), py::arg("n_angles") = 4, py::arg("aggregation") = "mean",
        py::arg("rotation_mode") = "exact-quarter",
        "Rotate, encode with a Python callable, align back and aggregate.");

  // contour
  m.def("contour_band", [](const MaskArray& mask, int width) { return from_mask(contour::contour_band(to_mask(mask), width)); },
        py::arg("mask"), py::arg("width") = 3);
  m.def("dice_contour_loss",
        [](const DoubleArray& pred, const DoubleArray& gt) {
          const auto r = contour::dice_contour_loss<double>(to_tensor<double>(pred), to_tensor<double>(gt));
          return py::make_tuple(r.loss, from_tensor(r.grad, pred.ndim() == 3));
        },
        py::arg("pred"), py::arg("gt"));
  m.def("cross_entropy_seg_loss",
        [](const DoubleArray& pred, const DoubleArray& gt) {
          const auto r = contour::cross_entropy_seg_loss<double>(to_tensor<double>(pred), to_tensor<double>(gt));
          return py::make_tuple(r.loss, from_tensor(r.grad, pred.ndim() == 3));
        },
        py::arg("pred"), py::arg("gt"));

  // metrics
  m.def("iou", [](const MaskArray& p, const MaskArray& g) { return metrics::iou(to_mask(p), to_mask(g)); });
  m.def("dsc", [](const MaskArray& p, const MaskArray& g) { return metrics::dsc(to_mask(p), to_mask(g)); });
  m.def("near_boundary_band",
        [](const MaskArray& g, int half_width) { return from_mask(metrics::near_boundary_band(to_mask(g), half_width)); },
        py::arg("gt"), py::arg("half_width") = 10);
  m.def("iou_nb",
        [](const MaskArray& p, const MaskArray& g, int half_width) {
          const auto gt = to_mask(g);
          return metrics::iou_nb(to_mask(p), gt, metrics::near_boundary_band(gt, half_width));
        },
        py::arg("pred"), py::arg("gt"), py::arg("half_width") = 10);
  m.def("rotational_stats", [](const std::vector<double>& ious) {
    const auto s = metrics::rotational_stats(ious);
    return py::make_tuple(s.rm, s.rsd);
  });

  // data
  m.def("generate_synthetic",
        [](std::uint64_t seed, int count, int size, const std::string& difficulty, int subsets) {
          data::SynthOptions o;
          o.size = size;
          o.difficulty = data::parse_difficulty(difficulty);
          o.subsets = subsets;
          std::vector<py::dict> out;
          for (const auto& s : data::generate_synthetic(seed, count, o)) out.push_back(sample_dict(s));
          return out;
        },
        py::arg("seed"), py::arg("count"), py::arg("size") = 96, py::arg("difficulty") = "high-contrast",
        py::arg("subsets") = 10);
  m.def("load_dataset", [](const std::filesystem::path& root) {
    std::vector<py::dict> out;
    for (const auto& s : data::load_dataset(root)) out.push_back(sample_dict(s));
    return out;
  });

  py::class_<Model>(m, "Model")
      .def(py::init<const ExperimentConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 1)
      .def_static("load", &Model::load, py::arg("checkpoint"), py::arg("sidecar"))
      .def("save", &Model::save, py::arg("checkpoint"), py::arg("sidecar"))
      .def("train", &Model::train, py::arg("config"), py::arg("samples"))
      .def("predict", &Model::predict, py::arg("images"), py::arg("ensemble") = false, py::arg("n_angles") = 4,
           "Foreground/background probabilities (..., H, W, 2).")
      .def("encode", &Model::encode, py::arg("images"))
      .def("evaluate", &Model::evaluate, py::arg("samples"), py::arg("rotational") = true,
           py::arg("band_half_width") = 10, py::arg("threshold") = 0.5)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def_property_readonly("n_angles", [](const Model& x) { return x.mafa().n_angles; });

  m.def("set_thread_count", &set_thread_count, py::arg("n"));
  m.def("gradcheck",
        [](int seeds, bool perturb) {
          GradCheckOptions o;
          o.seeds = seeds;
          o.perturb = perturb;
          std::vector<py::tuple> out;
          for (const auto& r : run_gradient_checks(o)) out.push_back(py::make_tuple(r.op, r.max_rel_err, r.pass));
          return out;
        },
        py::arg("seeds") = 5, py::arg("perturb") = false);
}
