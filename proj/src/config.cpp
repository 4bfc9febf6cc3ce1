#include "mafaseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mafaseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw std::invalid_argument("not a number: '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<int>(item));
  }
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
  return std::string(buf, r.ptr);
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename M>
Field int_field(M member) {
  return {[member](ExperimentConfig& c, const std::string& v) { member(c) = parse_number<std::remove_reference_t<decltype(member(c))>>(v); },
          [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); }};
}

template <typename M>
Field double_field(M member) {
  return {[member](ExperimentConfig& c, const std::string& v) { member(c) = parse_number<double>(v); },
          [member](const ExperimentConfig& c) { return fmt(member(const_cast<ExperimentConfig&>(c))); }};
}

template <typename M>
Field bool_field(M member) {
  return {[member](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(v); },
          [member](const ExperimentConfig& c) {
            return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          }};
}

template <typename M>
Field string_field(M member) {
  return {[member](ExperimentConfig& c, const std::string& v) { member(c) = v; },
          [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); }};
}

template <typename M>
Field list_field(M member) {
  return {[member](ExperimentConfig& c, const std::string& v) { member(c) = parse_int_list(v); },
          [member](const ExperimentConfig& c) { return join(member(const_cast<ExperimentConfig&>(c))); }};
}

#define MEMBER(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"model.input_size", int_field(MEMBER(model.input_size))},
      {"model.encoder_widths", list_field(MEMBER(model.encoder_widths))},
      {"model.output_stride", int_field(MEMBER(model.output_stride))},
      {"model.aspp_channels", int_field(MEMBER(model.aspp_channels))},
      {"model.skip_channels", int_field(MEMBER(model.skip_channels))},
      {"model.aspp_rates", list_field(MEMBER(model.aspp_rates))},
      {"model.decoder_widths", list_field(MEMBER(model.decoder_widths))},
      {"model.batchnorm", bool_field(MEMBER(model.batchnorm))},
      {"mafa.n_angles", int_field(MEMBER(mafa.n_angles))},
      {"mafa.aggregation",
       {[](ExperimentConfig& c, const std::string& v) { c.mafa.aggregation = mafa::parse_aggregation(v); },
        [](const ExperimentConfig& c) { return mafa::to_string(c.mafa.aggregation); }}},
      {"mafa.rotation_mode",
       {[](ExperimentConfig& c, const std::string& v) { c.mafa.rotation_mode = mafa::parse_rotation_mode(v); },
        [](const ExperimentConfig& c) { return mafa::to_string(c.mafa.rotation_mode); }}},
      {"mafa.placement",
       {[](ExperimentConfig& c, const std::string& v) { c.mafa.placement = mafa::parse_placement(v); },
        [](const ExperimentConfig& c) { return mafa::to_string(c.mafa.placement); }}},
      {"augment.hue", bool_field(MEMBER(augment.hue))},
      {"augment.hue_range", double_field(MEMBER(augment.hue_range))},
      {"augment.brightness", bool_field(MEMBER(augment.brightness))},
      {"augment.brightness_range", double_field(MEMBER(augment.brightness_range))},
      {"augment.saturation", bool_field(MEMBER(augment.saturation))},
      {"augment.saturation_min", double_field(MEMBER(augment.saturation_min))},
      {"augment.saturation_max", double_field(MEMBER(augment.saturation_max))},
      {"augment.contrast", bool_field(MEMBER(augment.contrast))},
      {"augment.contrast_min", double_field(MEMBER(augment.contrast_min))},
      {"augment.contrast_max", double_field(MEMBER(augment.contrast_max))},
      {"augment.flip_lr", bool_field(MEMBER(augment.flip_lr))},
      {"augment.flip_ud", bool_field(MEMBER(augment.flip_ud))},
      {"augment.rotation", bool_field(MEMBER(augment.rotation))},
      {"augment.zoom_in", bool_field(MEMBER(augment.zoom_in))},
      {"augment.zoom_in_max", double_field(MEMBER(augment.zoom_in_max))},
      {"augment.zoom_out", bool_field(MEMBER(augment.zoom_out))},
      {"augment.zoom_out_min", double_field(MEMBER(augment.zoom_out_min))},
      {"train.epochs", int_field(MEMBER(train.epochs))},
      {"train.batch_size", int_field(MEMBER(train.batch_size))},
      {"train.lr", double_field(MEMBER(train.lr))},
      {"train.lr_decay", double_field(MEMBER(train.lr_decay))},
      {"train.lr_decay_epochs", int_field(MEMBER(train.lr_decay_epochs))},
      {"train.seed", int_field(MEMBER(train.seed))},
      {"train.dropout_keep", double_field(MEMBER(train.dropout_keep))},
      {"train.contour", bool_field(MEMBER(train.contour))},
      {"train.contour_width", int_field(MEMBER(train.contour_width))},
      {"train.max_steps", int_field(MEMBER(train.max_steps))},
      {"data.train", string_field(MEMBER(data.train))},
      {"data.test", string_field(MEMBER(data.test))},
      {"data.synth_seed", int_field(MEMBER(data.synth_seed))},
      {"data.synth_test_seed", int_field(MEMBER(data.synth_test_seed))},
      {"data.synth_count", int_field(MEMBER(data.synth_count))},
      {"data.synth_test_count", int_field(MEMBER(data.synth_test_count))},
      {"data.synth_subsets", int_field(MEMBER(data.synth_subsets))},
      {"data.difficulty",
       {[](ExperimentConfig& c, const std::string& v) { c.data.difficulty = data::parse_difficulty(v); },
        [](const ExperimentConfig& c) { return data::to_string(c.data.difficulty); }}},
      {"eval.threshold", double_field(MEMBER(eval.threshold))},
      {"eval.band_half_width", int_field(MEMBER(eval.band_half_width))},
      {"eval.kfold", int_field(MEMBER(eval.kfold))},
      {"eval.rotational", bool_field(MEMBER(eval.rotational))},
      {"eval.overlays", bool_field(MEMBER(eval.overlays))},
      {"eval.ensemble", bool_field(MEMBER(eval.ensemble))},
      {"ablate.variants", string_field(MEMBER(ablate.variants))},
      {"threads", int_field(MEMBER(threads))},
      {"out", string_field(MEMBER(out))},
  };
  return table;
}

#undef MEMBER

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  mafa.validate();
  augment.validate();
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + msg);
  };
  need(train.epochs >= 1, "train.epochs must be >= 1");
  need(train.batch_size >= 1, "train.batch_size must be >= 1");
  need(train.lr > 0.0, "train.lr must be > 0");
  need(train.lr_decay > 0.0 && train.lr_decay <= 1.0, "train.lr_decay must be in (0, 1]");
  need(train.lr_decay_epochs >= 1, "train.lr_decay_epochs must be >= 1");
  need(train.dropout_keep > 0.0 && train.dropout_keep <= 1.0, "train.dropout_keep must be in (0, 1]");
  need(train.contour_width >= 1, "train.contour_width must be >= 1");
  need(train.max_steps >= 0, "train.max_steps must be >= 0");
  need(data.synth_count >= 1 && data.synth_test_count >= 1, "synthetic counts must be >= 1");
  need(data.synth_subsets >= 1, "data.synth_subsets must be >= 1");
  need(eval.band_half_width >= 0, "eval.band_half_width must be >= 0");
  need(eval.kfold == 0 || eval.kfold >= 2, "eval.kfold must be 0 or >= 2");
  need(threads >= 1, "threads must be >= 1");
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(cfg, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace mafaseg
