#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmcaps/tensor.hpp"

namespace mmcaps {

// Central-finite-difference comparison against reverse-mode gradients.
// Always run in double: float arithmetic is too noisy for the tolerances
// this project holds itself to.
struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// `build` must construct a scalar loss from the given leaves each time it
// is called; leaf values are perturbed in place between calls.
inline GradCheckReport grad_check(const std::string& name,
                                  std::vector<Tensor<double>> leaves,
                                  const std::function<Tensor<double>()>& build,
                                  double tolerance = 1e-4, double step = 1e-5) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  Tensor<double> loss = build();
  backward(loss);

  GradCheckReport rep;
  rep.name = name;
  rep.tolerance = tolerance;
  for (auto& leaf : leaves) {
    auto vals = leaf.values();
    for (int64_t i = 0; i < leaf.numel(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + step;
      const double up = build().item();
      vals[i] = orig - step;
      const double down = build().item();
      vals[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = leaf.has_grad() ? leaf.grad()[i] : 0.0;
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      rep.max_rel_err = std::max(rep.max_rel_err, std::abs(analytic - numeric) / denom);
    }
  }
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

}  // namespace mmcaps
