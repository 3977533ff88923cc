#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmcaps/capsules.hpp"
#include "mmcaps/conv.hpp"
#include "mmcaps/decoder.hpp"
#include "mmcaps/fusion.hpp"
#include "mmcaps/gradcheck.hpp"
#include "mmcaps/losses.hpp"
#include "mmcaps/random.hpp"
#include "mmcaps/sentence.hpp"
#include "mmcaps/video.hpp"

namespace mmcaps {

// Named finite-difference checks covering every differentiable op plus the
// routing composite. All run in double regardless of the training scalar
// type; that is the whole point of the dual-precision design.
inline std::vector<GradCheckReport> run_gradchecks(const std::string& scope = "all") {
  using T = Tensor<double>;
  std::vector<std::pair<std::string, std::function<GradCheckReport()>>> checks;

  auto rand_t = [](uint64_t seed, Shape shape, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    auto t = T::zeros(std::move(shape));
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
  };

  auto unary = [&](const std::string& name, std::function<T(const T&)> fn, double lo = -1.0,
                   double hi = 1.0) {
    checks.emplace_back(name, [=] {
      auto x = rand_t(1000 + static_cast<uint64_t>(name.size()) * 7, {3, 5}, lo, hi);
      return grad_check(name, {x}, [&] { return sum_all(fn(x)); });
    });
  };

  unary("sigmoid", [](const T& x) { return sigmoid(x); });
  unary("softplus", [](const T& x) { return softplus(x); });
  unary("exp", [](const T& x) { return exp(x); });
  unary("log", [](const T& x) { return log(x); }, 0.2, 2.0);
  unary("square", [](const T& x) { return square(x); });
  unary("neg", [](const T& x) { return neg(x); });
  unary("add_scalar", [](const T& x) { return add_scalar(x, 0.7); });
  unary("mul_scalar", [](const T& x) { return mul_scalar(x, -1.3); });
  checks.emplace_back("relu", [=] {
    auto x = rand_t(1999, {3, 5});
    for (auto& v : x.values())  // keep inputs away from the kink
      if (std::abs(v) < 0.1) v = v < 0 ? v - 0.2 : v + 0.2;
    return grad_check("relu", {x}, [&] { return sum_all(square(relu(x))); });
  });
  unary("sum_all", [](const T& x) { return square(sum_all(x)); });
  unary("mean_all", [](const T& x) { return square(mean_all(x)); });
  unary("sum_axis", [](const T& x) { return square(sum_axis(x, 1)); });
  unary("mean_axis", [](const T& x) { return square(mean_axis(x, 0)); });
  unary("max_axis", [](const T& x) { return square(max_axis(x, 1)); });
  unary("softmax", [](const T& x) { return square(softmax(x, 1)); });
  unary("reshape", [](const T& x) { return square(reshape(x, {5, 3})); });
  unary("expand", [](const T& x) { return square(expand(x, 1, 4)); });
  unary("permute", [](const T& x) { return square(permute(x, {1, 0})); });
  unary("narrow", [](const T& x) { return square(narrow(x, 1, 1, 3)); });
  unary("zero_except", [](const T& x) { return square(zero_except(x, 0, 1)); });

  checks.emplace_back("add_sub_mul_div", [=] {
    auto a = rand_t(2001, {4, 4});
    auto b = rand_t(2002, {4, 4}, 0.5, 1.5);
    return grad_check("add_sub_mul_div", {a, b}, [&] {
      return sum_all(add(div(mul(a, b), b), sub(a, b)));
    });
  });
  checks.emplace_back("concat", [=] {
    auto a = rand_t(2003, {2, 3});
    auto b = rand_t(2004, {2, 2});
    return grad_check("concat", {a, b},
                      [&] { return sum_all(square(concat<double>({a, b}, 1))); });
  });
  checks.emplace_back("matmul", [=] {
    auto a = rand_t(2005, {3, 4});
    auto b = rand_t(2006, {4, 2});
    return grad_check("matmul", {a, b}, [&] { return sum_all(square(matmul(a, b))); });
  });
  checks.emplace_back("linear", [=] {
    auto x = rand_t(2007, {2, 5});
    auto w = rand_t(2008, {3, 5});
    auto b = rand_t(2009, {3});
    return grad_check("linear", {x, w, b}, [&] { return sum_all(square(linear(x, w, b))); });
  });
  checks.emplace_back("embedding", [=] {
    auto table = rand_t(2010, {6, 4});
    std::vector<int> idx = {0, 3, 3, 5};
    return grad_check("embedding", {table},
                      [&] { return sum_all(square(embedding(table, idx))); });
  });
  checks.emplace_back("conv3d", [=] {
    auto x = rand_t(2011, {2, 2, 4, 4});
    auto w = rand_t(2012, {3, 2, 1, 3, 3});
    auto b = rand_t(2013, {3});
    return grad_check("conv3d", {x, w, b}, [&] {
      return sum_all(square(conv3d(x, w, b, {1, 1, 1}, {0, 1, 1})));
    });
  });
  checks.emplace_back("conv3d_strided", [=] {
    auto x = rand_t(2014, {2, 3, 5, 5});
    auto w = rand_t(2015, {2, 2, 2, 3, 3});
    auto b = rand_t(2016, {2});
    return grad_check("conv3d_strided", {x, w, b}, [&] {
      return sum_all(square(conv3d(x, w, b, {1, 2, 2}, {1, 1, 1})));
    });
  });
  checks.emplace_back("conv_transpose3d", [=] {
    auto x = rand_t(2017, {2, 2, 3, 3});
    auto w = rand_t(2018, {2, 3, 2, 3, 3});
    auto b = rand_t(2019, {3});
    return grad_check("conv_transpose3d", {x, w, b}, [&] {
      return sum_all(square(conv_transpose3d(x, w, b, {1, 2, 2}, {0, 1, 1}, {0, 1, 1})));
    });
  });
  checks.emplace_back("conv1d", [=] {
    auto x = rand_t(2020, {3, 7});
    auto w = rand_t(2021, {2, 3, 3});
    auto b = rand_t(2022, {2});
    return grad_check("conv1d", {x, w, b}, [&] { return sum_all(square(conv1d(x, w, b))); });
  });
  checks.emplace_back("maxpool3d", [=] {
    auto x = rand_t(2023, {2, 2, 4, 4});
    return grad_check("maxpool3d", {x}, [&] {
      return sum_all(square(maxpool3d(x, {2, 2, 2}, {1, 2, 2})));
    });
  });
  checks.emplace_back("maxpool1d", [=] {
    auto x = rand_t(2024, {2, 8});
    return grad_check("maxpool1d", {x}, [&] { return sum_all(square(maxpool1d(x, 3, 2))); });
  });
  checks.emplace_back("capsule_votes", [=] {
    auto m = rand_t(2025, {2, 3, 16});
    auto t = rand_t(2026, {3, 2, 16});
    return grad_check("capsule_votes", {m, t},
                      [&] { return sum_all(square(capsule_votes(m, t))); });
  });
  checks.emplace_back("spread_loss", [=] {
    auto a = rand_t(2027, {4}, 0.05, 0.95);
    return grad_check("spread_loss", {a}, [&] { return spread_loss(a, 1, 0.6); });
  });
  checks.emplace_back("seg_loss", [=] {
    auto logits = rand_t(2028, {2, 4, 4}, -2.0, 2.0);
    auto gt = T::zeros({2, 4, 4});
    Rng rng(2029);
    for (auto& v : gt.values()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return grad_check("seg_loss", {logits}, [&] { return seg_loss(logits, gt); });
  });
  checks.emplace_back("em_routing_2iter", [=] {
    auto a = rand_t(2030, {3}, 0.2, 0.9);
    auto v = rand_t(2031, {3, 2, 16});
    auto beta_a = rand_t(2032, {2}, -0.3, 0.3);
    auto beta_u = rand_t(2033, {2}, -0.3, 0.3);
    return grad_check(
        "em_routing_2iter", {a, v, beta_a, beta_u},
        [&] {
          EMRoutingParams<double> p;
          p.beta_a = beta_a;
          p.beta_u = beta_u;
          p.iterations = 2;
          auto out = em_routing(a, v, p);
          return add(sum_all(square(out.poses)), sum_all(square(out.activations)));
        },
        1e-3);
  });
  checks.emplace_back("primary_capsules", [=] {
    auto feats = rand_t(2034, {3, 7, 7});
    PrimaryCapsuleHead<double> head;
    head.pose_weight = rand_t(2035, {2 * 16, 3, 1, 5, 5}, -0.3, 0.3);
    head.pose_bias = rand_t(2036, {2 * 16}, -0.1, 0.1);
    head.act_weight = rand_t(2037, {2, 3, 1, 5, 5}, -0.3, 0.3);
    head.act_bias = rand_t(2038, {2}, -0.1, 0.1);
    head.types = 2;
    head.kernel = 5;
    return grad_check("primary_capsules",
                      {feats, head.pose_weight, head.pose_bias, head.act_weight, head.act_bias},
                      [&] {
                        auto grid = make_primary_capsules(feats, head);
                        return add(sum_all(square(grid.poses)), sum_all(square(grid.activations)));
                      });
  });
  checks.emplace_back("sentence_encoder", [=] {
    SentenceEncoderParams<double> p;
    p.embed = rand_t(2039, {6, 4}, -0.5, 0.5);
    for (int64_t kk : {2, 3, 4}) {
      ConvBranch<double> br;
      br.kernel = kk;
      br.weight = rand_t(2040 + static_cast<uint64_t>(kk), {5, 4, kk}, -0.4, 0.4);
      br.bias = rand_t(2050 + static_cast<uint64_t>(kk), {5}, -0.1, 0.1);
      p.branches.push_back(br);
    }
    p.pose_weight = rand_t(2060, {2 * 16, 5}, -0.4, 0.4);
    p.pose_bias = rand_t(2061, {2 * 16}, -0.1, 0.1);
    p.act_weight = rand_t(2062, {2, 5}, -0.4, 0.4);
    p.act_bias = rand_t(2063, {2}, -0.1, 0.1);
    p.types = 2;
    TokenSeq seq;
    seq.indices.fill(0);
    seq.indices[0] = 2;
    seq.indices[1] = 4;
    seq.indices[2] = 3;
    seq.indices[3] = 5;
    seq.indices[4] = 2;
    seq.length = 5;
    std::vector<Tensor<double>> leaves = {p.embed, p.pose_weight, p.pose_bias, p.act_weight,
                                          p.act_bias};
    for (auto& br : p.branches) {
      leaves.push_back(br.weight);
      leaves.push_back(br.bias);
    }
    return grad_check("sentence_encoder", leaves, [&] {
      auto enc = encode_sentence(p, seq);
      return add(sum_all(square(enc.capsules.poses)), sum_all(square(enc.capsules.activations)));
    });
  });
  checks.emplace_back("video_encoder_tiny", [=] {
    VideoEncoderParams<double> p;
    int64_t chans[3] = {4, 6, 8};
    int64_t in_ch = 3;
    uint64_t s = 2070;
    for (int b = 0; b < 3; ++b) {
      ConvBlock<double> blk;
      blk.weight = rand_t(s++, {chans[b], in_ch, 3, 3, 3}, -0.2, 0.2);
      blk.bias = rand_t(s++, {chans[b]}, -0.05, 0.05);
      blk.stride = b < 2 ? Dims3{1, 2, 2} : Dims3{1, 1, 1};
      p.blocks.push_back(blk);
      in_ch = chans[b];
    }
    auto video = rand_t(s++, {3, 2, 8, 8}, 0.0, 1.0);
    std::vector<Tensor<double>> leaves = {video};
    for (auto& blk : p.blocks) {
      leaves.push_back(blk.weight);
      leaves.push_back(blk.bias);
    }
    return grad_check("video_encoder_tiny", leaves, [&] {
      auto taps = encode_video(p, video);
      return sum_all(square(taps.features));
    });
  });

  std::vector<GradCheckReport> reports;
  for (auto& [name, fn] : checks)
    if (scope == "all" || scope == name) reports.push_back(fn());
  if (reports.empty()) throw ContractError("gradcheck: unknown op name: " + scope);
  return reports;
}

}  // namespace mmcaps
