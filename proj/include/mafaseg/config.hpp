#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mafaseg/data.hpp"
#include "mafaseg/mafa.hpp"
#include "mafaseg/model.hpp"

namespace mafaseg {

struct TrainConfig {
  int epochs = 60;
  int batch_size = 16;
  double lr = 0.0005;
  double lr_decay = 0.5;
  int lr_decay_epochs = 15;
  std::uint64_t seed = 1;
  double dropout_keep = 0.5;
  bool contour = true;
  int contour_width = 3;
  /// Stop after this many optimizer steps (0 = no limit).
  int max_steps = 0;
};

struct DataConfig {
  /// Dataset directories; empty means "generate synthetically".
  std::string train;
  std::string test;
  std::uint64_t synth_seed = 7;
  std::uint64_t synth_test_seed = 8;
  int synth_count = 250;
  int synth_test_count = 50;
  int synth_subsets = 10;
  data::Difficulty difficulty = data::Difficulty::HighContrast;
};

struct EvalConfig {
  double threshold = 0.5;
  int band_half_width = 10;
  /// > 1 runs K-fold cross-validation over the training set's subsets.
  int kfold = 0;
  bool rotational = true;
  bool overlays = false;
  /// Multi-angle ensemble at inference (uses mafa.n_angles angles).
  bool ensemble = false;
};

struct AblateConfig {
  /// Comma-separated variant names, or the presets "table1" / "table2".
  std::string variants = "table1";
};

/// Everything one run needs. Serialized as flat `section.key = value` lines;
/// an empty file is a valid all-defaults config.
struct ExperimentConfig {
  model::ModelConfig model;
  mafa::MafaConfig mafa;
  data::AugmentConfig augment;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  AblateConfig ablate;
  int threads = 1;
  std::string out = "out";

  void validate() const;
};

/// Parses `key = value` lines (`#` starts a comment). Unknown keys and bad
/// values throw std::invalid_argument naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies one `key=value` assignment.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// Every key with its resolved value, one per line, in a fixed order.
std::string format_config(const ExperimentConfig& cfg);

}  // namespace mafaseg
