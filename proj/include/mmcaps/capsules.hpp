#pragma once

#include <vector>

#include "mmcaps/conv.hpp"
#include "mmcaps/tensor.hpp"

namespace mmcaps {

// Spatial grid of capsules: a 4x4 pose matrix and a scalar activation per
// type per location. Activations are produced by sigmoids, so they stay in
// [0,1]; poses are unconstrained.
template <typename S>
struct CapsuleGrid {
  Tensor<S> poses;        // [H,W,n,4,4]
  Tensor<S> activations;  // [H,W,n]

  int64_t height() const { return poses.dim(0); }
  int64_t width() const { return poses.dim(1); }
  int64_t types() const { return poses.dim(2); }
};

// Non-spatial capsule set encoding one query.
template <typename S>
struct SentenceCapsules {
  Tensor<S> poses;        // [m,4,4]
  Tensor<S> activations;  // [m]

  int64_t types() const { return poses.dim(0); }
};

template <typename S>
struct EMRoutingParams {
  Tensor<S> beta_a;  // [n_out] activation offsets
  Tensor<S> beta_u;  // [n_out] per-dimension description-length cost
  int iterations = 3;
  std::vector<double> inv_temp_schedule = {1.0, 2.0, 3.0};
  double variance_floor = 1e-4;

  double inv_temp(int iter) const {
    if (inv_temp_schedule.empty()) return 1.0;
    size_t i = std::min(static_cast<size_t>(iter), inv_temp_schedule.size() - 1);
    return inv_temp_schedule[i];
  }
};

// Two convolution heads over a shared feature map: a linear one emitting
// 16 pose entries per capsule type and a sigmoid one emitting activations.
// No padding, so a k x k kernel shrinks the grid by k-1 per axis.
template <typename S>
struct PrimaryCapsuleHead {
  Tensor<S> pose_weight;  // [n*16, C, k, k] stored as [n*16, C, 1, k, k]
  Tensor<S> pose_bias;    // [n*16]
  Tensor<S> act_weight;   // [n, C, 1, k, k]
  Tensor<S> act_bias;     // [n]
  int64_t types = 0;
  int64_t kernel = 0;
};

template <typename S>
CapsuleGrid<S> make_primary_capsules(const Tensor<S>& features, const PrimaryCapsuleHead<S>& head) {
  if (features.rank() != 3) throw DimensionError("make_primary_capsules: features must be [C,H,W]");
  const int64_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (head.kernel > h || head.kernel > w)
    throw DimensionError("make_primary_capsules: kernel larger than feature map");
  auto f4 = reshape(features, {c, 1, h, w});
  auto pose_maps = conv3d(f4, head.pose_weight, head.pose_bias);  // [n*16,1,H',W']
  auto act_maps = conv3d(f4, head.act_weight, head.act_bias);     // [n,1,H',W']
  const int64_t ho = pose_maps.dim(2), wo = pose_maps.dim(3);
  const int64_t n = head.types;
  CapsuleGrid<S> grid;
  auto p3 = reshape(pose_maps, {n * 16, ho, wo});
  grid.poses = reshape(permute(p3, {1, 2, 0}), {ho, wo, n, 4, 4});
  auto a3 = reshape(act_maps, {n, ho, wo});
  grid.activations = sigmoid(permute(a3, {1, 2, 0}));
  return grid;
}

// V[l,i,j] = M[l,i] . T[i,j] as 4x4 matrix products over a leading batch
// of grid locations. Dedicated op: the hand-written backward avoids a pile
// of expand/permute nodes in the hot path.
template <typename S>
Tensor<S> capsule_votes(const Tensor<S>& poses, const Tensor<S>& transforms) {
  if (poses.rank() != 3 || poses.dim(2) != 16)
    throw DimensionError("capsule_votes: poses must be [L,n_in,16]");
  if (transforms.rank() != 3 || transforms.dim(2) != 16)
    throw DimensionError("capsule_votes: transforms must be [n_in,n_out,16]");
  if (poses.dim(1) != transforms.dim(0))
    throw DimensionError("capsule_votes: capsule type count mismatch");
  const int64_t L = poses.dim(0), ni = poses.dim(1), no = transforms.dim(1);
  auto out = detail::make_result<S>({L, ni, no, 16}, detail::any_requires<S>({&poses, &transforms}));
  const S* pm = poses.values().data();
  const S* pt = transforms.values().data();
  S* pv = out.values().data();
  for (int64_t l = 0; l < L; ++l)
    for (int64_t i = 0; i < ni; ++i) {
      const S* m = pm + (l * ni + i) * 16;
      for (int64_t j = 0; j < no; ++j) {
        const S* t = pt + (i * no + j) * 16;
        S* v = pv + ((l * ni + i) * no + j) * 16;
        for (int r = 0; r < 4; ++r)
          for (int cc = 0; cc < 4; ++cc) {
            S acc = 0;
            for (int k = 0; k < 4; ++k) acc += m[r * 4 + k] * t[k * 4 + cc];
            v[r * 4 + cc] = acc;
          }
      }
    }
  detail::attach<S>(out, {poses, transforms},
                    [mn = poses.node().get(), tn = transforms.node().get(), L, ni,
                     no](TensorNode<S>& self) {
                      const S* gv = self.grad.data();
                      if (mn->requires_grad) {
                        mn->ensure_grad();
                        for (int64_t l = 0; l < L; ++l)
                          for (int64_t i = 0; i < ni; ++i) {
                            S* gm = mn->grad.data() + (l * ni + i) * 16;
                            for (int64_t j = 0; j < no; ++j) {
                              const S* t = tn->value.data() + (i * no + j) * 16;
                              const S* g = gv + ((l * ni + i) * no + j) * 16;
                              for (int r = 0; r < 4; ++r)
                                for (int k = 0; k < 4; ++k) {
                                  S acc = 0;
                                  for (int cc = 0; cc < 4; ++cc)
                                    acc += g[r * 4 + cc] * t[k * 4 + cc];
                                  gm[r * 4 + k] += acc;
                                }
                            }
                          }
                      }
                      if (tn->requires_grad) {
                        tn->ensure_grad();
                        for (int64_t l = 0; l < L; ++l)
                          for (int64_t i = 0; i < ni; ++i) {
                            const S* m = mn->value.data() + (l * ni + i) * 16;
                            for (int64_t j = 0; j < no; ++j) {
                              S* gt = tn->grad.data() + (i * no + j) * 16;
                              const S* g = gv + ((l * ni + i) * no + j) * 16;
                              for (int k = 0; k < 4; ++k)
                                for (int cc = 0; cc < 4; ++cc) {
                                  S acc = 0;
                                  for (int r = 0; r < 4; ++r) acc += m[r * 4 + k] * g[r * 4 + cc];
                                  gt[k * 4 + cc] += acc;
                                }
                            }
                          }
                      }
                    });
  return out;
}

template <typename S>
struct RoutingOutput {
  Tensor<S> poses;        // [L,n_out,16]
  Tensor<S> activations;  // [L,n_out]
};

// EM routing over a batch of independent capsule sets (one per grid
// location). Per iteration:
//   M-step: r = R * a_in; mu, sigma^2 = r-weighted vote statistics;
//           cost_h = (beta_u + log sigma_h) * sum(r);
//           a_j = logistic(lambda_t * (beta_a - sum_h cost_h))
//   E-step: R[i,j] proportional to a_j * N(V[i,j]; mu_j, sigma_j), normalized
//           over j (computed in log space, softmax handles the shift).
// sigma^2 gets variance_floor added before the log. A column with sum(r)=0
// (all input activations zero) continues as mu=0, sigma^2=1, cost=0.
template <typename S>
RoutingOutput<S> em_routing_batch(const Tensor<S>& acts_in, const Tensor<S>& votes,
                                  const EMRoutingParams<S>& params) {
  if (acts_in.rank() != 2) throw DimensionError("em_routing: activations must be [L,N]");
  if (votes.rank() != 4 || votes.dim(3) != 16)
    throw DimensionError("em_routing: votes must be [L,N,n_out,16]");
  const int64_t L = acts_in.dim(0), N = acts_in.dim(1), J = votes.dim(2);
  if (N < 1) throw ContractError("em_routing: need at least one input capsule");
  if (votes.dim(0) != L || votes.dim(1) != N)
    throw DimensionError("em_routing: vote/activation shape mismatch");
  if (params.iterations < 1) throw ContractError("em_routing: iterations must be >= 1");
  for (S v : votes.values())
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("em_routing: non-finite vote");
  for (S v : acts_in.values())
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("em_routing: non-finite activation");

  const S floor_v = static_cast<S>(params.variance_floor);
  constexpr double kLog2Pi = 1.8378770664093453;

  Tensor<S> R = Tensor<S>::full({L, N, J}, S(1) / static_cast<S>(J));
  Tensor<S> mu, a_out;
  for (int iter = 0; iter < params.iterations; ++iter) {
    const S lambda = static_cast<S>(params.inv_temp(iter));
    // M-step
    auto r = mul(R, expand(acts_in, 2, J));  // [L,N,J]
    auto r_sum = sum_axis(r, 1);             // [L,J]
    // constant masks for the degenerate sum(r)=0 continuation
    auto mask = Tensor<S>::zeros({L, J});
    auto inv_mask = Tensor<S>::zeros({L, J});
    {
      auto rs = r_sum.values();
      auto mv = mask.values();
      auto iv = inv_mask.values();
      for (int64_t i = 0; i < r_sum.numel(); ++i) {
        mv[i] = rs[i] == S(0) ? S(1) : S(0);
        iv[i] = S(1) - mv[i];
      }
    }
    auto denom16 = expand(add(r_sum, mask), 2, 16);  // [L,J,16], safe divisor
    auto r16 = expand(r, 3, 16);                     // [L,N,J,16]
    auto mu_raw = div(sum_axis(mul(r16, votes), 1), denom16);
    mu = mul(mu_raw, expand(inv_mask, 2, 16));  // [L,J,16]
    auto diff = sub(votes, expand(mu, 1, N));   // [L,N,J,16]
    auto d2 = square(diff);
    auto var_raw = div(sum_axis(mul(r16, d2), 1), denom16);
    auto var = add(mul(add_scalar(var_raw, floor_v), expand(inv_mask, 2, 16)),
                   expand(mask, 2, 16));  // [L,J,16]
    auto logvar = log(var);
    auto half_logdet = mul_scalar(sum_axis(logvar, 2), S(0.5));  // [L,J]
    auto beta_u_cost = mul_scalar(expand(params.beta_u, 0, L), S(16));
    auto cost = mul(r_sum, add(beta_u_cost, half_logdet));  // [L,J]
    auto z = mul_scalar(sub(expand(params.beta_a, 0, L), cost), lambda);
    a_out = sigmoid(z);  // [L,J]

    if (iter + 1 < params.iterations) {
      // E-step
      auto quad = sum_axis(div(d2, expand(var, 1, N)), 3);           // [L,N,J]
      auto logdet = expand(mul_scalar(half_logdet, S(2)), 1, N);     // [L,N,J]
      auto logp = mul_scalar(add_scalar(add(quad, logdet), S(16) * static_cast<S>(kLog2Pi)),
                             S(-0.5));
      auto log_a = neg(softplus(neg(z)));  // log sigmoid(z)
      R = softmax(add(logp, expand(log_a, 1, N)), 2);
    }
  }
  return {mu, a_out};
}

// Single capsule set: activations [N], votes [N,n_out,16] ->
// poses [n_out,4,4], activations [n_out].
template <typename S>
RoutingOutput<S> em_routing(const Tensor<S>& acts_in, const Tensor<S>& votes,
                            const EMRoutingParams<S>& params) {
  if (acts_in.rank() != 1) throw DimensionError("em_routing: activations must be [N]");
  if (votes.rank() != 3) throw DimensionError("em_routing: votes must be [N,n_out,16]");
  const int64_t N = acts_in.dim(0), J = votes.dim(1);
  auto out = em_routing_batch(reshape(acts_in, {1, N}), reshape(votes, {1, N, J, 16}), params);
  return {reshape(out.poses, {J, 4, 4}), reshape(out.activations, {J})};
}

}  // namespace mmcaps
