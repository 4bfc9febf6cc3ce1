// mafaseg command-line tool.
//
//   mafaseg synth | train | eval | audit | ablate | gradcheck
//           [--config PATH] [--seed N] [--threads N] [--out DIR] [--set key=value ...]
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef MAFASEG_SYSTEM_CLI11
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif
#include <nlohmann/json.hpp>

#include "mafaseg/config.hpp"
#include "mafaseg/data.hpp"
#include "mafaseg/gradcheck.hpp"
#include "mafaseg/metrics.hpp"
#include "mafaseg/model.hpp"
#include "mafaseg/parallel.hpp"
#include "mafaseg/params.hpp"
#include "mafaseg/training.hpp"

using namespace mafaseg;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
  std::vector<std::string> sets;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Config file, then --set assignments, then the dedicated flags.
ExperimentConfig resolve(const Common& c, bool seed_is_data_seed = false) {
  ExperimentConfig cfg;
  try {
    if (!c.config.empty()) cfg = load_config(c.config);
    for (const auto& kv : c.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed) (seed_is_data_seed ? cfg.data.synth_seed : cfg.train.seed) = *c.seed;
    if (c.threads) cfg.threads = *c.threads;
    if (c.out) cfg.out = *c.out;
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  set_thread_count(cfg.threads);
  return cfg;
}

fs::path prepare_out(const ExperimentConfig& cfg) {
  const fs::path out = cfg.out;
  fs::create_directories(out);
  write_text(out / "config.cfg", format_config(cfg));
  return out;
}

fs::path sidecar_for(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p.replace_extension(".json");
  if (fs::exists(p)) return p;
  for (fs::path dir = checkpoint.parent_path(); !dir.empty(); dir = dir.parent_path()) {
    if (fs::exists(dir / "model.json")) return dir / "model.json";
    if (dir == dir.parent_path()) break;
  }
  throw std::runtime_error("no model.json sidecar found for " + checkpoint.string());
}

struct LoadedModel {
  model::Network<float> net;
  mafa::MafaConfig mafa;
};

LoadedModel load_model(const fs::path& checkpoint) {
  std::ifstream in(sidecar_for(checkpoint));
  std::stringstream ss;
  ss << in.rdbuf();
  model::ModelConfig mc;
  mafa::MafaConfig mf;
  model::parse_sidecar_json(ss.str(), mc, mf);
  LoadedModel m{model::Network<float>(mc, 0), mf};
  AdamState adam;
  load_checkpoint(checkpoint, m.net.params(), adam);
  return m;
}

std::vector<data::Sample> eval_samples(ExperimentConfig& cfg, const model::ModelConfig& mc) {
  cfg.model = mc;
  auto samples = test_set(cfg);
  if (samples.empty()) throw std::runtime_error("evaluation set is empty");
  return samples;
}

void write_metrics(const fs::path& dir, const EvalOutput& ev, const metrics::FoldStatistics* folds) {
  std::ostringstream csv;
  metrics::write_csv(csv, ev.records);
  write_text(dir / "metrics.csv", csv.str());
  write_text(dir / "summary.json", metrics::summary_json(ev.summary, folds));
}

void print_summary(const metrics::Summary& s) {
  std::printf("images %zu  mDSC %.4f  mIOU %.4f  mRM_IOU %.4f  mRSD_IOU %.4f  mIOU_NB %.4f\n", s.count,
              s.mdsc, s.miou, s.mrm_iou, s.mrsd_iou, s.miou_nb);
}

// ---- synth -------------------------------------------------------------------

int cmd_synth(const Common& c, std::optional<int> count, std::optional<std::string> difficulty,
              std::optional<int> size, std::optional<int> subsets) {
  ExperimentConfig cfg = resolve(c, true);
  try {
    if (count) cfg.data.synth_count = *count;
    if (size) cfg.model.input_size = *size;
    if (subsets) cfg.data.synth_subsets = *subsets;
    if (difficulty) cfg.data.difficulty = data::parse_difficulty(*difficulty);
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path out = prepare_out(cfg);
  data::SynthOptions o;
  o.size = cfg.model.input_size;
  o.difficulty = cfg.data.difficulty;
  o.subsets = cfg.data.synth_subsets;
  const auto samples = data::generate_synthetic(cfg.data.synth_seed, cfg.data.synth_count, o);
  data::save_dataset(out, samples);
  std::size_t empty = 0;
  double fg = 0.0;
  for (const auto& s : samples) {
    empty += s.mask.count() == 0;
    fg += static_cast<double>(s.mask.count()) / static_cast<double>(s.mask.size());
  }
  std::printf("wrote %zu samples (%dx%d, %s) to %s\n", samples.size(), o.size, o.size,
              data::to_string(o.difficulty).c_str(), out.string().c_str());
  std::printf("subsets %d  empty masks %zu  mean foreground fraction %.4f\n", o.subsets, empty,
              fg / static_cast<double>(samples.size()));
  return 0;
}

// ---- train -------------------------------------------------------------------

int cmd_train(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  const fs::path out = prepare_out(cfg);
  const auto samples = training_set(cfg);
  if (samples.empty()) throw std::runtime_error("training set is empty");
  fs::create_directories(out / "checkpoints");
  write_text(out / "model.json", model::sidecar_json(cfg.model, cfg.mafa));

  model::Network<float> net(cfg.model, cfg.train.seed);
  AdamState adam = AdamState::for_params(net.params());
  std::ofstream loss(out / "loss.csv", std::ios::binary);
  loss << "epoch,step,seg_loss,contour_loss,total,lr\n";
  std::ofstream epochs(out / "epochs.csv", std::ios::binary);
  epochs << "epoch,seg_loss,contour_loss,total,lr\n";
  fs::path last_good;

  TrainCallbacks cb;
  cb.on_step = [&](const LossRow& r) {
    loss << fmt("%d,%d,%.8g,%.8g,%.8g,%.8g\n", r.epoch, r.step, r.seg_loss, r.contour_loss, r.total, r.lr);
  };
  cb.on_epoch = [&](const EpochSummary& e) {
    epochs << fmt("%d,%.8g,%.8g,%.8g,%.8g\n", e.epoch, e.seg_loss, e.contour_loss, e.total, e.lr);
    epochs.flush();
    loss.flush();
    const fs::path ckpt = out / "checkpoints" / fmt("epoch_%03d.bin", e.epoch + 1);
    save_checkpoint(ckpt, net.params(), adam);
    fs::copy_file(ckpt, out / "model.bin", fs::copy_options::overwrite_existing);
    last_good = ckpt;
    std::printf("epoch %3d  L_S %.4f  L_C %.4f  L %.4f  lr %.6g\n", e.epoch, e.seg_loss, e.contour_loss,
                e.total, e.lr);
    std::fflush(stdout);
  };
  std::printf("training on %zu samples, %d epochs, N_A=%d\n", samples.size(), cfg.train.epochs,
              cfg.mafa.n_angles);
  try {
    const auto r = train_model(net, adam, samples, cfg, cb);
    std::printf("done: %zu steps in %.1fs, checkpoint %s\n", r.steps.size(), r.seconds,
                (out / "model.bin").string().c_str());
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    std::fprintf(stderr, "last good checkpoint: %s\n", last_good.empty() ? "(none)" : last_good.string().c_str());
    return 2;
  }
  return 0;
}

// ---- eval --------------------------------------------------------------------

InferenceOptions inference_options(const ExperimentConfig& cfg, const mafa::MafaConfig& trained) {
  InferenceOptions io;
  io.threshold = cfg.eval.threshold;
  io.mafa = trained;
  if (cfg.eval.ensemble) {
    io.ensemble = true;
    io.mafa = cfg.mafa;
  }
  return io;
}

void write_overlays(const fs::path& dir, const std::vector<data::Sample>& samples, const EvalOutput& ev) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    data::write_png_rgb(dir / (samples[i].id + ".png"), overlay(samples[i].image, ev.predictions[i], samples[i].mask));
  }
}

int cmd_eval_kfold(ExperimentConfig& cfg, const fs::path& out) {
  const auto samples = training_set(cfg);
  const auto folds = data::kfold_split(samples, cfg.eval.kfold);
  std::vector<metrics::Summary> summaries;
  std::vector<metrics::MetricsRecord> all;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<data::Sample> train, test;
    for (auto i : folds[f].train) train.push_back(samples[i]);
    for (auto i : folds[f].test) test.push_back(samples[i]);
    model::Network<float> net(cfg.model, cfg.train.seed);
    AdamState adam = AdamState::for_params(net.params());
    train_model(net, adam, train, cfg);
    const auto ev = evaluate(net, test, inference_options(cfg, cfg.mafa), cfg.eval.band_half_width,
                             cfg.eval.rotational);
    const fs::path dir = out / fmt("fold_%d", static_cast<int>(f + 1));
    fs::create_directories(dir);
    write_metrics(dir, ev, nullptr);
    if (cfg.eval.overlays) write_overlays(dir / "overlays", test, ev);
    std::printf("fold %zu/%zu (%zu train, %zu test): ", f + 1, folds.size(), train.size(), test.size());
    print_summary(ev.summary);
    summaries.push_back(ev.summary);
    all.insert(all.end(), ev.records.begin(), ev.records.end());
  }
  const auto stats = metrics::fold_statistics(summaries);
  EvalOutput pooled;
  pooled.records = all;
  pooled.summary = metrics::dataset_summary(all);
  write_metrics(out, pooled, &stats);
  std::printf("mean over %zu folds: mIOU %.4f +- %.4f  mRSD_IOU %.4f +- %.4f  mIOU_NB %.4f +- %.4f\n",
              summaries.size(), stats.mean.miou, stats.stdev.miou, stats.mean.mrsd_iou, stats.stdev.mrsd_iou,
              stats.mean.miou_nb, stats.stdev.miou_nb);
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& dataset,
             std::optional<int> kfold, bool overlays) {
  ExperimentConfig cfg = resolve(c);
  try {
    if (kfold) cfg.eval.kfold = *kfold;
    if (overlays) cfg.eval.overlays = true;
    if (!dataset.empty()) cfg.data.test = dataset;
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (cfg.eval.kfold == 0 && checkpoint.empty()) throw UsageError("eval needs --checkpoint (or --kfold K)");
  const fs::path out = prepare_out(cfg);
  if (cfg.eval.kfold > 1) {
    if (!dataset.empty()) cfg.data.train = dataset;
    return cmd_eval_kfold(cfg, out);
  }
  auto m = load_model(checkpoint);
  const auto samples = eval_samples(cfg, m.net.config());
  const auto ev = evaluate(m.net, samples, inference_options(cfg, m.mafa), cfg.eval.band_half_width,
                           cfg.eval.rotational);
  write_metrics(out, ev, nullptr);
  if (cfg.eval.overlays) write_overlays(out / "overlays", samples, ev);
  print_summary(ev.summary);
  return 0;
}

// ---- audit -------------------------------------------------------------------

int cmd_audit(const Common& c, const std::string& checkpoint, const std::string& dataset) {
  ExperimentConfig cfg = resolve(c);
  if (!dataset.empty()) cfg.data.test = dataset;
  const fs::path out = prepare_out(cfg);
  auto m = load_model(checkpoint);
  const auto samples = eval_samples(cfg, m.net.config());
  const auto ev = evaluate(m.net, samples, inference_options(cfg, m.mafa), cfg.eval.band_half_width, true);
  const auto angles = metrics::evaluation_angles();

  std::ostringstream csv;
  csv << "id";
  for (const auto& a : angles) csv << fmt(",iou_%03d", static_cast<int>(a.degrees()));
  csv << ",rm_iou,rsd_iou\n";
  std::vector<double> angle_mean(angles.size(), 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& r = ev.rotational[i];
    csv << samples[i].id;
    for (std::size_t k = 0; k < angles.size(); ++k) {
      csv << fmt(",%.6f", r.per_angle[k]);
      angle_mean[k] += r.per_angle[k] / static_cast<double>(samples.size());
    }
    csv << fmt(",%.6f,%.6f\n", r.rm, r.rsd);
  }
  write_text(out / "audit.csv", csv.str());

  nlohmann::ordered_json j;
  j["count"] = samples.size();
  j["mrm_iou"] = ev.summary.mrm_iou;
  j["mrsd_iou"] = ev.summary.mrsd_iou;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < angles.size(); ++k) {
    per[fmt("%d", static_cast<int>(angles[k].degrees()))] = angle_mean[k];
  }
  j["mean_iou_per_angle"] = per;
  write_text(out / "audit.json", j.dump(2) + "\n");

  std::printf("angle   ");
  for (const auto& a : angles) std::printf("%8.0f", a.degrees());
  std::printf("\nmIOU    ");
  for (double v : angle_mean) std::printf("%8.4f", v);
  std::printf("\nmRM_IOU %.4f  mRSD_IOU %.4f over %zu images\n", ev.summary.mrm_iou, ev.summary.mrsd_iou,
              samples.size());
  return 0;
}

// ---- ablate ------------------------------------------------------------------

struct Variant {
  std::string name;
  ExperimentConfig cfg;
  bool ensemble = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Variant make_variant(const ExperimentConfig& base, const std::string& name) {
  Variant v{name, base};
  auto& c = v.cfg;
  auto angles = [&c](int n) {
    c.mafa.n_angles = n;
    c.mafa.rotation_mode = (n == 1 || n == 2 || n == 4) ? geometry::RotationMode::ExactQuarter
                                                        : geometry::RotationMode::Bilinear;
  };
  if (name == "no-rot-aug") {
    c.augment.rotation = false;
    angles(1);
  } else if (name == "rot-aug" || name == "plain") {
    angles(1);
  } else if (name.rfind("na", 0) == 0 && name.size() == 3 && name[2] >= '2' && name[2] <= '6') {
    angles(name[2] - '0');
  } else if (name == "maxout") {
    angles(4);
    c.mafa.aggregation = mafa::Aggregation::MaxOut;
  } else if (name == "mid") {
    angles(4);
    c.mafa.placement = mafa::Placement::BackboneMid;
  } else if (name == "last") {
    angles(4);
    c.mafa.placement = mafa::Placement::BackboneLast;
  } else if (name == "ensemble") {
    angles(4);
    v.ensemble = true;
  } else if (name == "contour") {
    angles(1);
    c.train.contour = true;
  } else if (name == "mafa") {
    angles(4);
    c.train.contour = false;
  } else if (name == "mafa+contour") {
    angles(4);
    c.train.contour = true;
  } else {
    throw UsageError("unknown ablation variant '" + name +
                     "' (no-rot-aug, rot-aug, na2..na6, maxout, mid, last, ensemble, plain, contour, mafa, "
                     "mafa+contour, or the presets table1 / table2)");
  }
  if (name == "plain") c.train.contour = false;
  return v;
}

int cmd_ablate(const Common& c, const std::string& variants_flag) {
  ExperimentConfig base = resolve(c);
  std::string spec = variants_flag.empty() ? base.ablate.variants : variants_flag;
  if (spec == "table1") spec = "no-rot-aug,rot-aug,na2,na3,na4,na5,na6,maxout,mid,last,ensemble";
  if (spec == "table2") spec = "plain,contour,mafa,mafa+contour";
  std::vector<Variant> variants;
  for (const auto& n : split_list(spec)) variants.push_back(make_variant(base, n));
  if (variants.empty()) throw UsageError("no ablation variants selected");
  base.ablate.variants = spec;
  const fs::path out = prepare_out(base);

  const auto train = training_set(base);
  const auto test = test_set(base);
  std::ostringstream csv;
  csv << "variant,n_angles,aggregation,placement,contour,miou,mrm_iou,mrsd_iou,miou_nb,train_seconds,eval_seconds\n";
  std::ostringstream table;
  table << fmt("%-14s %4s %-8s %-15s %-7s %7s %8s %9s %8s %9s %8s\n", "variant", "N_A", "agg", "placement",
               "contour", "mIOU", "mRM_IOU", "mRSD_IOU", "mIOU_NB", "train_s", "eval_s");
  std::fputs(table.str().c_str(), stdout);
  for (auto& v : variants) {
    v.cfg.out = (out / v.name).string();
    fs::create_directories(v.cfg.out);
    write_text(fs::path(v.cfg.out) / "config.cfg", format_config(v.cfg));
    // The ensemble row trains a plain model and averages its rotated outputs.
    mafa::MafaConfig train_mafa = v.ensemble ? mafa::MafaConfig{} : v.cfg.mafa;
    ExperimentConfig tc = v.cfg;
    tc.mafa = train_mafa;
    model::Network<float> net(tc.model, tc.train.seed);
    AdamState adam = AdamState::for_params(net.params());
    const auto tr = train_model(net, adam, train, tc);
    save_checkpoint(fs::path(v.cfg.out) / "model.bin", net.params(), adam);
    write_text(fs::path(v.cfg.out) / "model.json", model::sidecar_json(tc.model, train_mafa));
    InferenceOptions io;
    io.threshold = v.cfg.eval.threshold;
    io.mafa = v.cfg.mafa;
    io.ensemble = v.ensemble;
    const auto ev = evaluate(net, test, io, v.cfg.eval.band_half_width, true);
    write_metrics(v.cfg.out, ev, nullptr);
    const auto& s = ev.summary;
    const std::string agg = mafa::to_string(v.cfg.mafa.aggregation);
    const std::string place = mafa::to_string(v.cfg.mafa.placement);
    const char* contour = v.cfg.train.contour ? "yes" : "no";
    csv << fmt("%s,%d,%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%.2f,%.2f\n", v.name.c_str(), v.cfg.mafa.n_angles,
               agg.c_str(), place.c_str(), contour, s.miou, s.mrm_iou, s.mrsd_iou, s.miou_nb, tr.seconds,
               ev.seconds);
    const std::string row = fmt("%-14s %4d %-8s %-15s %-7s %7.4f %8.4f %9.4f %8.4f %9.1f %8.1f\n", v.name.c_str(),
                                v.cfg.mafa.n_angles, agg.c_str(), place.c_str(), contour, s.miou, s.mrm_iou,
                                s.mrsd_iou, s.miou_nb, tr.seconds, ev.seconds);
    table << row;
    std::fputs(row.c_str(), stdout);
    std::fflush(stdout);
  }
  write_text(out / "ablate.csv", csv.str());
  write_text(out / "ablate.txt", table.str());
  std::printf("\n%s", table.str().c_str());
  return 0;
}

// ---- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(const Common& c, int seeds, bool perturb) {
  ExperimentConfig cfg = resolve(c);
  if (c.out) prepare_out(cfg);
  GradCheckOptions opts;
  opts.seeds = seeds;
  opts.perturb = perturb;
  const auto results = run_gradient_checks(opts);
  const std::string text = format_gradcheck(results);
  std::fputs(text.c_str(), stdout);
  if (c.out) write_text(fs::path(cfg.out) / "gradcheck.csv", text);
  for (const auto& r : results) {
    if (!r.pass) return 2;
  }
  return 0;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Config file (key = value lines)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Seed (data seed for synth, training seed otherwise)");
  app->add_option("--threads", c.threads, "Worker threads (1 = fully deterministic)")->check(CLI::PositiveNumber);
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--set", c.sets, "Config override key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-angle feature aggregation segmentation toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic instrument dataset");
  add_common(synth, common);
  std::optional<int> count, size, subsets;
  std::optional<std::string> difficulty;
  synth->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Image side length")->check(CLI::PositiveNumber);
  synth->add_option("--subsets", subsets, "Number of subsets")->check(CLI::PositiveNumber);
  synth->add_option("--difficulty", difficulty, "high-contrast | low-contrast");

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, common);

  std::string checkpoint, dataset;
  std::optional<int> kfold;
  bool overlays = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (or run K-fold cross-validation)");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (model.json sidecar alongside)");
  eval->add_option("--data", dataset, "Dataset directory (default: synthetic test set)");
  eval->add_option("--kfold", kfold, "K-fold cross-validation over the training set's subsets");
  eval->add_flag("--overlays", overlays, "Write prediction overlays");

  auto* audit = app.add_subcommand("audit", "Per-angle rotation consistency report");
  add_common(audit, common);
  audit->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  audit->add_option("--data", dataset, "Dataset directory (default: synthetic test set)");

  std::string variants;
  auto* ablate = app.add_subcommand("ablate", "Train and compare ablation variants");
  add_common(ablate, common);
  ablate->add_option("--variants", variants, "Comma-separated variants or table1 / table2");

  int seeds = 20;
  bool perturb = false;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  add_common(grad, common);
  grad->add_option("--seeds", seeds, "Random instances per check")->check(CLI::PositiveNumber);
  grad->add_flag("--perturb", perturb, "Scale analytic gradients by 1.01 (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(common, count, difficulty, size, subsets);
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint, dataset, kfold, overlays);
    if (*audit) return cmd_audit(common, checkpoint, dataset);
    if (*ablate) return cmd_ablate(common, variants);
    if (*grad) return cmd_gradcheck(common, seeds, perturb);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
