#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmcaps/checkpoint.hpp"
#include "mmcaps/params.hpp"

namespace mmcaps {

template <typename S>
class Adam {
 public:
  Adam(ParamStore<S>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& item : params_.items()) {
      m_.emplace_back(item.tensor.numel(), S(0));
      v_.emplace_back(item.tensor.numel(), S(0));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t p = 0; p < params_.items().size(); ++p) {
      auto tensor = params_.items()[p].tensor;
      if (!tensor.has_grad()) continue;
      auto vals = tensor.values();
      auto grads = tensor.grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (int64_t i = 0; i < tensor.numel(); ++i) {
        const double g = static_cast<double>(grads[i]);
        m[i] = static_cast<S>(beta1_ * m[i] + (1.0 - beta1_) * g);
        v[i] = static_cast<S>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        vals[i] = static_cast<S>(vals[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  int64_t step_count() const { return t_; }

  // Moment buffers round-trip through the same container format as model
  // checkpoints, under derived names.
  void save_state(const std::string& path) const {
    ParamStore<S> scratch;
    auto step_t = Tensor<S>::from({1}, {static_cast<S>(t_)});
    scratch.add("adam.step", step_t);
    for (size_t p = 0; p < params_.items().size(); ++p) {
      const auto& item = params_.items()[p];
      scratch.add("adam.m." + item.name,
                  Tensor<S>::from(item.tensor.shape(), std::vector<S>(m_[p].begin(), m_[p].end())));
      scratch.add("adam.v." + item.name,
                  Tensor<S>::from(item.tensor.shape(), std::vector<S>(v_[p].begin(), v_[p].end())));
    }
    save_checkpoint(scratch, path);
  }

  void load_state(const std::string& path) {
    ParamStore<S> scratch;
    auto step_t = scratch.add("adam.step", Tensor<S>::zeros({1}));
    std::vector<std::pair<Tensor<S>, Tensor<S>>> slots;
    for (auto& item : params_.items()) {
      auto m = scratch.add("adam.m." + item.name, Tensor<S>::zeros(item.tensor.shape()));
      auto v = scratch.add("adam.v." + item.name, Tensor<S>::zeros(item.tensor.shape()));
      slots.emplace_back(m, v);
    }
    load_checkpoint(scratch, path);
    t_ = static_cast<int64_t>(step_t.values()[0]);
    for (size_t p = 0; p < slots.size(); ++p) {
      std::copy(slots[p].first.values().begin(), slots[p].first.values().end(), m_[p].begin());
      std::copy(slots[p].second.values().begin(), slots[p].second.values().end(), v_[p].begin());
    }
  }

 private:
  ParamStore<S>& params_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

}  // namespace mmcaps
