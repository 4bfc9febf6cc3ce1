#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mafaseg/rng.hpp"
#include "mafaseg/tensor.hpp"

namespace mafaseg {

/// A named parameter tensor with its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

/// Ordered, uniquely named parameter tensors. Shapes are fixed at creation.
template <typename T>
class ParamSet {
 public:
  /// Adds a zero-initialized parameter and returns its index.
  std::size_t add(const std::string& name, Shape shape, bool trainable = true);

  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  Tensor<T>& value(std::size_t i) { return params_[i].value; }
  const Tensor<T>& value(std::size_t i) const { return params_[i].value; }
  Tensor<T>& grad(std::size_t i) { return params_[i].grad; }

  /// Index of a named parameter; throws std::out_of_range when absent.
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad();
  /// Number of scalar values in trainable parameters.
  std::size_t trainable_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// He-style init: zero-mean normal with variance 2 / fan_in.
template <typename T>
void he_init(Tensor<T>& kernel, int fan_in, Rng& rng);

/// Per-parameter Adam moments; entries align with trainable parameters of
/// the ParamSet they were created for (by name).
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::string> names;
  std::vector<Tensor<float>> first_moment;
  std::vector<Tensor<float>> second_moment;

  template <typename T>
  static AdamState for_params(const ParamSet<T>& params);
  bool operator==(const AdamState&) const = default;
};

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update over every trainable parameter using the
/// accumulated gradients. Throws std::runtime_error naming the first
/// parameter whose gradient is non-finite, before touching any state.
template <typename T>
void adam_step(ParamSet<T>& params, AdamState& state, const AdamConfig& cfg);

struct LrSchedule {
  double initial = 0.0005;
  double decay_rate = 0.5;
  int decay_epochs = 15;
};

/// Staircase exponential decay: initial * decay_rate^floor(epoch / decay_epochs).
double lr_at(int epoch, const LrSchedule& schedule = {});

/// Binary checkpoint: "MAFA1", u32 parameter count, then per parameter u32
/// name length, UTF-8 name, 4 x u32 dims, float32 values; followed by the
/// Adam block (i64 step, u32 count, then "<name>.m" / "<name>.v" records in
/// the same layout). All integers and floats little-endian.
template <typename T>
void write_checkpoint(std::ostream& out, const ParamSet<T>& params, const AdamState& adam);
template <typename T>
void read_checkpoint(std::istream& in, ParamSet<T>& params, AdamState& adam);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<T>& params,
                     const AdamState& adam);
template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParamSet<T>& params, AdamState& adam);

}  // namespace mafaseg
