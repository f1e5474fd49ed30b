#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "scmse/tensor.hpp"

namespace scmse::diff {

/// One named array with its gradient, trainability mask and Adam moments.
/// `state_only` marks non-trainable run state (e.g. normalization running
/// averages) that is persisted but never counted as a parameter.
template <typename T>
struct ParamEntry {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<uint8_t> mask;  // 1 = trainable
  Tensor<T> m;
  Tensor<T> v;
  bool state_only = false;
};

template <typename T>
class ParameterStore {
 public:
  ParamEntry<T>& add(const std::string& name, Tensor<T> value, bool state_only = false) {
    if (entries_.count(name)) throw std::invalid_argument("store: duplicate parameter " + name);
    ParamEntry<T>& e = entries_[name];
    e.grad = Tensor<T>(value.shape());
    e.m = Tensor<T>(value.shape());
    e.v = Tensor<T>(value.shape());
    e.mask = state_only ? Tensor<uint8_t>(value.shape())
                        : Tensor<uint8_t>::full(value.shape(), 1);
    e.state_only = state_only;
    e.value = std::move(value);
    return e;
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  ParamEntry<T>& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("store: unknown parameter " + name);
    return it->second;
  }
  const ParamEntry<T>& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("store: unknown parameter " + name);
    return it->second;
  }

  void zero_grads() {
    for (auto& [name, e] : entries_) e.grad.set_zero();
  }

  int64_t count_trainable() const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_)
      for (Index i = 0; i < e.mask.numel(); ++i) n += e.mask[i];
    return n;
  }

  int64_t count_parameters() const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_)
      if (!e.state_only) n += e.value.numel();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, ParamEntry<T>> entries_;  // ordered: deterministic iteration
};

struct AdamState {
  int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

/// alpha = (1/sqrt(C)) * min(1/sqrt(phi), phi/sqrt(Psi^3)); rises until
/// phi == warmup_steps, decays as 1/sqrt(phi) afterwards.
inline double warmup_lr(int64_t phi, double c = 128.0, double warmup_steps = 10000.0) {
  if (phi < 1) throw std::invalid_argument("warmup_lr: step must be >= 1");
  const double p = static_cast<double>(phi);
  return (1.0 / std::sqrt(c)) *
         std::min(1.0 / std::sqrt(p), p / std::sqrt(warmup_steps * warmup_steps * warmup_steps));
}

/// Bias-corrected Adam; the update is gated elementwise by the learn mask,
/// so masked entries never change.
template <typename T>
void adam_step(ParameterStore<T>& store, AdamState& state, double lr) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& [name, e] : store) {
    if (e.state_only) continue;
    for (Index i = 0; i < e.value.numel(); ++i) {
      const double g = static_cast<double>(e.grad[i]);
      if (std::isnan(g)) throw std::runtime_error("adam: NaN gradient in parameter " + name);
      double m = state.beta1 * static_cast<double>(e.m[i]) + (1.0 - state.beta1) * g;
      double v = state.beta2 * static_cast<double>(e.v[i]) + (1.0 - state.beta2) * g * g;
      e.m[i] = static_cast<T>(m);
      e.v[i] = static_cast<T>(v);
      if (!e.mask[i]) continue;
      const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps);
      e.value[i] = static_cast<T>(static_cast<double>(e.value[i]) - update);
    }
  }
}

}  // namespace scmse::diff
