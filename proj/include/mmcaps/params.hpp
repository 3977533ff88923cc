#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mmcaps/random.hpp"
#include "mmcaps/tensor.hpp"

namespace mmcaps {

// Ordered registry of named trainable tensors. Names must be unique; the
// registration order defines checkpoint and optimizer-state order.
template <typename S>
class ParamStore {
 public:
  Tensor<S> add(const std::string& name, Tensor<S> t) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.push_back({name, t});
    return t;
  }

  struct Item {
    std::string name;
    Tensor<S> tensor;
  };

  const std::vector<Item>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  Tensor<S> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return items_[it->second].tensor;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  void zero_grads() {
    for (auto& it : items_) it.tensor.zero_grad();
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (auto& it : items_) n += it.tensor.numel();
    return n;
  }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// weight init
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> init_normal(Rng& rng, Shape shape, double stddev) {
  auto t = Tensor<S>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<S>(rng.normal(0.0, stddev));
  return t;
}

template <typename S>
Tensor<S> init_he(Rng& rng, Shape shape, int64_t fan_in) {
  return init_normal<S>(rng, std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)));
}

// Stack of 4x4 matrices initialized to identity plus Gaussian noise.
template <typename S>
Tensor<S> init_identity_noise(Rng& rng, Shape shape, double stddev) {
  auto t = init_normal<S>(rng, std::move(shape), stddev);
  auto v = t.values();
  const int64_t mats = t.numel() / 16;
  for (int64_t m = 0; m < mats; ++m)
    for (int64_t i = 0; i < 4; ++i) v[m * 16 + i * 4 + i] += S(1);
  return t;
}

}  // namespace mmcaps
