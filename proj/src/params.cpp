#include "mafaseg/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace mafaseg {

template <typename T>
std::size_t ParamSet<T>::add(const std::string& name, Shape shape, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
  Param<T> p;
  p.name = name;
  p.value = Tensor<T>(shape);
  p.grad = Tensor<T>(shape);
  p.trainable = trainable;
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename T>
std::size_t ParamSet<T>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamSet: no parameter named " + name);
  return it->second;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T(0));
}

template <typename T>
std::size_t ParamSet<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

template <typename T>
void he_init(Tensor<T>& kernel, int fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : kernel.values()) v = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
AdamState AdamState::for_params(const ParamSet<T>& params) {
  AdamState s;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    s.names.push_back(p.name);
    s.first_moment.emplace_back(p.value.shape());
    s.second_moment.emplace_back(p.value.shape());
  }
  return s;
}

template <typename T>
void adam_step(ParamSet<T>& params, AdamState& state, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("adam_step: lr must be > 0");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable) order.push_back(i);
  }
  if (order.size() != state.names.size()) {
    throw std::invalid_argument("adam_step: state does not match parameter set");
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& p = params[order[k]];
    if (p.name != state.names[k] || !(p.grad.shape() == state.first_moment[k].shape())) {
      throw std::invalid_argument("adam_step: state mismatch at parameter " + p.name);
    }
    if (!p.grad.all_finite()) {
      throw std::runtime_error("adam_step: non-finite gradient in parameter " + p.name);
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& p = params[order[k]];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      p.value[i] = static_cast<T>(p.value[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

double lr_at(int epoch, const LrSchedule& schedule) {
  if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
  if (schedule.decay_epochs < 1) throw std::invalid_argument("lr_at: decay_epochs must be >= 1");
  return schedule.initial * std::pow(schedule.decay_rate, epoch / schedule.decay_epochs);
}

namespace {

constexpr char kMagic[5] = {'M', 'A', 'F', 'A', '1'};

template <typename U>
void put_le(std::ostream& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(U));
  if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U v;
  std::memcpy(&v, bytes, sizeof(U));
  return v;
}

template <typename T>
void put_record(std::ostream& out, const std::string& name, const Tensor<T>& t) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  const Shape& s = t.shape();
  for (int d : {s.n, s.h, s.w, s.c}) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (T v : t.values()) put_le<float>(out, static_cast<float>(v));
}

struct Record {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

Record get_record(std::istream& in) {
  Record r;
  const auto len = get_le<std::uint32_t>(in);
  if (len > (1u << 16)) throw std::runtime_error("checkpoint: implausible name length");
  r.name.resize(len);
  in.read(r.name.data(), len);
  if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
  std::uint32_t dims[4];
  for (auto& d : dims) d = get_le<std::uint32_t>(in);
  r.shape = Shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                  static_cast<int>(dims[3])};
  if (!r.shape.valid()) throw std::runtime_error("checkpoint: invalid shape for " + r.name);
  r.values.resize(r.shape.count());
  for (auto& v : r.values) v = get_le<float>(in);
  return r;
}

}  // namespace

template <typename T>
void write_checkpoint(std::ostream& out, const ParamSet<T>& params, const AdamState& adam) {
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) put_record(out, p.name, p.value);
  put_le<std::int64_t>(out, adam.step);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(adam.names.size() * 2));
  for (std::size_t k = 0; k < adam.names.size(); ++k) {
    put_record(out, adam.names[k] + ".m", adam.first_moment[k]);
    put_record(out, adam.names[k] + ".v", adam.second_moment[k]);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

template <typename T>
void read_checkpoint(std::istream& in, ParamSet<T>& params, AdamState& adam) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic (expected MAFA1)");
  }
  const auto count = get_le<std::uint32_t>(in);
  if (count != params.size()) {
    throw std::runtime_error("checkpoint: holds " + std::to_string(count) +
                             " parameters, model expects " + std::to_string(params.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r = get_record(in);
    auto& p = params[params.index_of(r.name)];
    if (!(p.value.shape() == r.shape)) {
      throw std::runtime_error("checkpoint: shape mismatch for " + r.name + ": file " +
                               r.shape.str() + ", model " + p.value.shape().str());
    }
    for (std::size_t k = 0; k < r.values.size(); ++k) p.value[k] = static_cast<T>(r.values[k]);
  }
  AdamState fresh = AdamState::for_params(params);
  fresh.step = get_le<std::int64_t>(in);
  const auto moments = get_le<std::uint32_t>(in);
  if (moments != fresh.names.size() * 2) {
    throw std::runtime_error("checkpoint: optimizer state does not match parameters");
  }
  for (std::size_t k = 0; k < fresh.names.size(); ++k) {
    for (int which = 0; which < 2; ++which) {
      Record r = get_record(in);
      const std::string expect = fresh.names[k] + (which == 0 ? ".m" : ".v");
      auto& dst = which == 0 ? fresh.first_moment[k] : fresh.second_moment[k];
      if (r.name != expect || !(r.shape == dst.shape())) {
        throw std::runtime_error("checkpoint: unexpected optimizer record " + r.name);
      }
      std::copy(r.values.begin(), r.values.end(), dst.values().begin());
    }
  }
  adam = std::move(fresh);
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<T>& params,
                     const AdamState& adam) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(out, params, adam);
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, ParamSet<T>& params, AdamState& adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  read_checkpoint(in, params, adam);
}

#define MAFASEG_INSTANTIATE(T)                                                                  \
  template class ParamSet<T>;                                                                   \
  template void he_init(Tensor<T>&, int, Rng&);                                                 \
  template AdamState AdamState::for_params(const ParamSet<T>&);                                 \
  template void adam_step(ParamSet<T>&, AdamState&, const AdamConfig&);                         \
  template void write_checkpoint(std::ostream&, const ParamSet<T>&, const AdamState&);          \
  template void read_checkpoint(std::istream&, ParamSet<T>&, AdamState&);                       \
  template void save_checkpoint(const std::filesystem::path&, const ParamSet<T>&,               \
                                const AdamState&);                                              \
  template void load_checkpoint(const std::filesystem::path&, ParamSet<T>&, AdamState&);

MAFASEG_INSTANTIATE(float)
MAFASEG_INSTANTIATE(double)
#undef MAFASEG_INSTANTIATE

}  // namespace mafaseg
