#pragma once

#include <vector>

#include "mmcaps/tensor.hpp"

namespace mmcaps {

// Margin-based classification loss: sum over non-target classes of
// max(0, m - (a_gt - a_i))^2.
template <typename S>
Tensor<S> spread_loss(const Tensor<S>& activations, int64_t gt_class, double margin) {
  if (activations.rank() != 1) throw DimensionError("spread_loss: activations must be [n]");
  const int64_t n = activations.dim(0);
  if (gt_class < 0 || gt_class >= n)
    throw ContractError("spread_loss: class " + std::to_string(gt_class) + " out of range");
  auto a_gt = reshape(expand(narrow(activations, 0, gt_class, 1), 0, n), {n});
  auto hinge = relu(add_scalar(sub(activations, a_gt), static_cast<S>(margin)));
  auto not_gt = Tensor<S>::full({n}, S(1));
  not_gt.values()[gt_class] = S(0);
  return sum_all(mul(square(hinge), not_gt));
}

// Mean sigmoid cross entropy against a {0,1} mask, computed in logit space:
// softplus(x) - x * p.
template <typename S>
Tensor<S> seg_loss(const Tensor<S>& logits, const Tensor<S>& gt_mask) {
  if (logits.shape() != gt_mask.shape())
    throw DimensionError("seg_loss: logits " + shape_str(logits.shape()) + " vs mask " +
                         shape_str(gt_mask.shape()));
  return mean_all(sub(softplus(logits), mul(logits, gt_mask)));
}

// L = lambda * Lc + (1 - lambda) * mean(per-resolution seg losses).
template <typename S>
Tensor<S> total_loss(const Tensor<S>& classification, const std::vector<Tensor<S>>& seg_losses,
                     double lambda) {
  if (seg_losses.empty()) throw ContractError("total_loss: no segmentation terms");
  Tensor<S> seg = seg_losses[0];
  for (size_t i = 1; i < seg_losses.size(); ++i) seg = add(seg, seg_losses[i]);
  seg = mul_scalar(seg, S(1) / static_cast<S>(seg_losses.size()));
  return add(mul_scalar(classification, static_cast<S>(lambda)),
             mul_scalar(seg, static_cast<S>(1.0 - lambda)));
}

// Linear ramp of the spread-loss margin, clamped to [start, end].
inline double margin_schedule(int64_t step, double start, double end, int64_t ramp_steps) {
  if (ramp_steps <= 0 || step >= ramp_steps) return end;
  if (step <= 0) return start;
  return start + (end - start) * static_cast<double>(step) / static_cast<double>(ramp_steps);
}

// One-way latch: once validation accuracy exceeds the saturation threshold,
// lambda drops to 0 and stays there.
inline double lambda_schedule(double val_accuracy, double current_lambda,
                              double saturation_threshold) {
  if (current_lambda == 0.0) return 0.0;
  return val_accuracy > saturation_threshold ? 0.0 : current_lambda;
}

}  // namespace mmcaps
