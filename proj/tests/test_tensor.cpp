#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "mmcaps/checkpoint.hpp"
#include "mmcaps/conv.hpp"
#include "mmcaps/gradcheck.hpp"
#include "mmcaps/params.hpp"
#include "mmcaps/random.hpp"
#include "mmcaps/tensor.hpp"

using namespace mmcaps;

namespace {

Tensor<double> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("elementwise and scalar op values") {
  auto a = Tensor<float>::from({3}, {1.f, 2.f, 3.f});
  auto b = Tensor<float>::from({3}, {4.f, 5.f, 6.f});
  auto s = add(a, b);
  CHECK(s.values()[2] == 9.f);
  auto d = div(b, a);
  CHECK(d.values()[1] == doctest::Approx(2.5f));
  auto m = mul_scalar(a, 2.f);
  CHECK(m.values()[0] == 2.f);
}

TEST_CASE("sigmoid at zero has value 0.5 and derivative 0.25") {
  auto x = Tensor<double>::from({1}, {0.0});
  x.set_requires_grad();
  auto y = sigmoid(x);
  CHECK(y.item() == doctest::Approx(0.5));
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("backward rejects non-scalar loss") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0});
  x.set_requires_grad();
  auto y = mul_scalar(x, 2.0);
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("gradient accumulation is additive across backward calls") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0});
  x.set_requires_grad();
  auto l1 = sum_all(mul_scalar(x, 3.0));
  auto l2 = sum_all(square(x));
  backward(l1);
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  backward(l2);
  // grad(l1) + grad(l2), i.e. 3 + 2x
  CHECK(x.grad()[0] == doctest::Approx(g1[0] + 2.0));
  CHECK(x.grad()[1] == doctest::Approx(g1[1] + 4.0));

  x.zero_grad();
  auto both = add(sum_all(mul_scalar(x, 3.0)), sum_all(square(x)));
  backward(both);
  CHECK(x.grad()[0] == doctest::Approx(3.0 + 2.0));
  CHECK(x.grad()[1] == doctest::Approx(3.0 + 4.0));
}

TEST_CASE("shared subgraph backpropagates once per path") {
  auto x = Tensor<double>::from({1}, {3.0});
  x.set_requires_grad();
  auto t = mul_scalar(x, 2.0);  // t = 2x
  auto loss = add(sum_all(t), sum_all(square(t)));  // 2x + 4x^2
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0 + 8.0 * 3.0));
}

TEST_CASE("pointwise/reduce/shape gradients match finite differences") {
  Rng rng(7);
  struct Case {
    const char* name;
    std::function<Tensor<double>(const Tensor<double>&)> fn;
  };
  std::vector<Case> cases = {
      {"sigmoid", [](const Tensor<double>& x) { return sum_all(sigmoid(x)); }},
      {"softplus", [](const Tensor<double>& x) { return sum_all(softplus(x)); }},
      {"exp", [](const Tensor<double>& x) { return sum_all(exp(x)); }},
      {"square", [](const Tensor<double>& x) { return sum_all(square(x)); }},
      {"mean_all", [](const Tensor<double>& x) { return mean_all(square(x)); }},
      {"sum_axis", [](const Tensor<double>& x) {
         return sum_all(square(sum_axis(reshape(x, {2, 3, 4}), 1)));
       }},
      {"softmax", [](const Tensor<double>& x) {
         return sum_all(square(softmax(reshape(x, {2, 3, 4}), 2)));
       }},
      {"expand", [](const Tensor<double>& x) {
         return sum_all(square(expand(x, 1, 3)));
       }},
      {"permute", [](const Tensor<double>& x) {
         return sum_all(square(permute(reshape(x, {2, 3, 4}), {2, 0, 1})));
       }},
      {"narrow", [](const Tensor<double>& x) {
         return sum_all(square(narrow(reshape(x, {2, 3, 4}), 1, 1, 2)));
       }},
      {"max_axis", [](const Tensor<double>& x) {
         return sum_all(square(max_axis(reshape(x, {2, 3, 4}), 1)));
       }},
  };
  for (auto& c : cases) {
    auto x = rand_tensor(rng, {24});
    auto rep = grad_check(c.name, {x}, [&] { return c.fn(x); });
    INFO(c.name, " max rel err ", rep.max_rel_err);
    CHECK(rep.pass);
  }
}

TEST_CASE("binary op gradients match finite differences") {
  Rng rng(11);
  auto a = rand_tensor(rng, {3, 4});
  auto b = rand_tensor(rng, {3, 4}, 0.5, 1.5);  // keep divisors away from 0
  auto rep = grad_check("binary-mix", {a, b}, [&] {
    return sum_all(add(div(mul(a, b), add_scalar(square(b), 1.0)), sub(a, b)));
  });
  INFO("max rel err ", rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(13);
  auto x = rand_tensor(rng, {20});
  for (auto& v : x.values())
    if (std::abs(v) < 0.1) v = v < 0 ? v - 0.2 : v + 0.2;
  auto rep = grad_check("relu", {x}, [&] { return sum_all(square(relu(x))); });
  CHECK(rep.pass);
}

TEST_CASE("log gradient on positive inputs") {
  Rng rng(17);
  auto x = rand_tensor(rng, {16}, 0.3, 2.0);
  auto rep = grad_check("log", {x}, [&] { return sum_all(log(x)); });
  CHECK(rep.pass);
}

TEST_CASE("concat and zero_except gradients") {
  Rng rng(19);
  auto a = rand_tensor(rng, {2, 3});
  auto b = rand_tensor(rng, {2, 2});
  auto rep = grad_check("concat", {a, b}, [&] {
    return sum_all(square(concat<double>({a, b}, 1)));
  });
  CHECK(rep.pass);

  auto c = rand_tensor(rng, {4, 3, 2});
  auto rep2 = grad_check("zero_except", {c}, [&] {
    return sum_all(square(zero_except(c, 1, 2)));
  });
  CHECK(rep2.pass);
}

TEST_CASE("matmul / linear / embedding") {
  Rng rng(23);
  auto a = rand_tensor(rng, {3, 4});
  auto b = rand_tensor(rng, {4, 5});
  auto rep = grad_check("matmul", {a, b}, [&] { return sum_all(square(matmul(a, b))); });
  CHECK(rep.pass);

  // identity weight picks the input up unchanged; zero weight returns bias
  auto w_id = Tensor<double>::zeros({3, 3});
  for (int i = 0; i < 3; ++i) w_id.values()[i * 3 + i] = 1.0;
  auto x = Tensor<double>::from({3}, {1.0, -2.0, 3.0});
  auto y = linear(x, w_id, Tensor<double>());
  CHECK(y.values()[1] == -2.0);
  auto w0 = Tensor<double>::zeros({2, 3});
  auto bias = Tensor<double>::from({2}, {0.5, -0.5});
  auto y0 = linear(x, w0, bias);
  CHECK(y0.values()[0] == 0.5);
  CHECK(y0.values()[1] == -0.5);

  auto xw = rand_tensor(rng, {2, 4});
  auto w = rand_tensor(rng, {3, 4});
  auto bb = rand_tensor(rng, {3});
  auto rep2 = grad_check("linear", {xw, w, bb}, [&] {
    return sum_all(square(linear(xw, w, bb)));
  });
  CHECK(rep2.pass);

  auto table = rand_tensor(rng, {6, 3});
  std::vector<int> idx = {1, 4, 1};
  auto rep3 = grad_check("embedding", {table}, [&] {
    return sum_all(square(embedding(table, idx)));
  });
  CHECK(rep3.pass);
  // gradient flows only to used rows
  table.zero_grad();
  backward(sum_all(embedding(table, idx)));
  CHECK(table.grad()[0 * 3] == 0.0);
  CHECK(table.grad()[1 * 3] == 2.0);  // row 1 used twice
  CHECK(table.grad()[4 * 3] == 1.0);
  CHECK(table.grad()[5 * 3] == 0.0);
}

TEST_CASE("conv3d identity kernel and zero input") {
  Rng rng(29);
  auto x = rand_tensor(rng, {1, 1, 1, 1});
  auto w = Tensor<double>::from({1, 1, 1, 1, 1}, {1.0});
  auto y = conv3d(x, w, Tensor<double>());
  CHECK(y.values()[0] == x.values()[0]);

  auto x4 = rand_tensor(rng, {2, 2, 3, 3});
  auto w1 = Tensor<double>::zeros({2, 2, 1, 1, 1});
  w1.values()[0] = 1.0;  // oc0<-ic0
  w1.values()[3] = 1.0;  // oc1<-ic1
  auto y4 = conv3d(x4, w1, Tensor<double>());
  for (int64_t i = 0; i < x4.numel(); ++i) CHECK(y4.values()[i] == x4.values()[i]);

  auto xz = Tensor<double>::zeros({2, 2, 4, 4});
  auto wr = rand_tensor(rng, {3, 2, 1, 3, 3});
  auto b = Tensor<double>::from({3}, {0.3, -0.7, 1.1});
  auto yz = conv3d(xz, wr, b, {1, 1, 1}, {0, 1, 1});
  for (int64_t oc = 0; oc < 3; ++oc)
    for (int64_t i = 0; i < yz.numel() / 3; ++i)
      CHECK(yz.values()[oc * (yz.numel() / 3) + i] == doctest::Approx(b.values()[oc]));
}

TEST_CASE("conv3d rejects channel mismatch") {
  auto x = Tensor<double>::zeros({2, 2, 4, 4});
  auto w = Tensor<double>::zeros({3, 5, 1, 3, 3});
  CHECK_THROWS_AS(conv3d(x, w, Tensor<double>()), DimensionError);
  auto wbig = Tensor<double>::zeros({3, 2, 1, 9, 9});
  CHECK_THROWS_AS(conv3d(x, wbig, Tensor<double>()), DimensionError);
}

TEST_CASE("conv3d gradient matches finite differences") {
  Rng rng(31);
  auto x = rand_tensor(rng, {2, 2, 4, 4});
  auto w = rand_tensor(rng, {3, 2, 1, 3, 3});
  auto b = rand_tensor(rng, {3});
  auto rep = grad_check("conv3d", {x, w, b}, [&] {
    return sum_all(square(conv3d(x, w, b, {1, 1, 1}, {0, 1, 1})));
  });
  INFO("max rel err ", rep.max_rel_err);
  CHECK(rep.pass);

  auto rep2 = grad_check("conv3d-strided", {x, w, b}, [&] {
    return sum_all(square(conv3d(x, w, b, {1, 2, 2}, {0, 1, 1})));
  });
  CHECK(rep2.pass);
}

TEST_CASE("conv_transpose3d identity, shape arithmetic, gradcheck") {
  Rng rng(37);
  auto x = rand_tensor(rng, {1, 2, 3, 3});
  auto w = Tensor<double>::from({1, 1, 1, 1, 1}, {1.0});
  auto y = conv_transpose3d(x, w, Tensor<double>());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);

  // stride-2 upsampling: 1x1x4x4, 3x3 kernel, padding 1, output_padding 1 -> 1x1x8x8
  auto x2 = rand_tensor(rng, {1, 1, 4, 4});
  auto w2 = rand_tensor(rng, {1, 1, 1, 3, 3});
  auto y2 = conv_transpose3d(x2, w2, Tensor<double>(), {1, 2, 2}, {0, 1, 1}, {0, 1, 1});
  CHECK(y2.shape() == Shape{1, 1, 8, 8});

  auto xg = rand_tensor(rng, {2, 2, 3, 3});
  auto wg = rand_tensor(rng, {2, 3, 2, 3, 3});
  auto bg = rand_tensor(rng, {3});
  auto rep = grad_check("conv_transpose3d", {xg, wg, bg}, [&] {
    return sum_all(square(conv_transpose3d(xg, wg, bg, {1, 2, 2}, {0, 1, 1}, {0, 1, 1})));
  });
  INFO("max rel err ", rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("conv_transpose3d forward is the adjoint of conv3d") {
  // <conv(x), y> == <x, tconv(y)> with shared weights: checks that the two
  // independently written kernels implement adjoint maps.
  Rng rng(41);
  const Dims3 stride{1, 2, 2}, pad{0, 1, 1};
  auto x = rand_tensor(rng, {2, 2, 5, 5});
  auto w = rand_tensor(rng, {3, 2, 1, 3, 3});
  auto cx = conv3d(x, w, Tensor<double>(), stride, pad);
  auto y = rand_tensor(rng, cx.shape());

  double lhs = 0;
  for (int64_t i = 0; i < cx.numel(); ++i) lhs += cx.values()[i] * y.values()[i];

  // the conv weight [Co,Ci,k] is already the tconv layout for the adjoint
  // map from conv-output space back to conv-input space
  auto ty = conv_transpose3d(y, w, Tensor<double>(), stride, pad, {0, 0, 0});
  // output_padding 0 can make tconv output smaller than x; compare the overlap
  REQUIRE(ty.dim(0) == x.dim(0));
  double rhs = 0;
  for (int64_t c = 0; c < x.dim(0); ++c)
    for (int64_t t = 0; t < ty.dim(1); ++t)
      for (int64_t h = 0; h < ty.dim(2); ++h)
        for (int64_t wd = 0; wd < ty.dim(3); ++wd) {
          int64_t xi = ((c * x.dim(1) + t) * x.dim(2) + h) * x.dim(3) + wd;
          int64_t ti = ((c * ty.dim(1) + t) * ty.dim(2) + h) * ty.dim(3) + wd;
          rhs += x.values()[xi] * ty.values()[ti];
        }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("conv1d identity, zero input, gradcheck") {
  Rng rng(43);
  auto x = rand_tensor(rng, {2, 6});
  auto wid = Tensor<double>::zeros({2, 2, 1});
  wid.values()[0] = 1.0;
  wid.values()[3] = 1.0;
  auto y = conv1d(x, wid, Tensor<double>());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);

  auto xz = Tensor<double>::zeros({2, 6});
  auto wr = rand_tensor(rng, {3, 2, 3});
  auto b = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
  auto yz = conv1d(xz, wr, b);
  for (int64_t oc = 0; oc < 3; ++oc)
    for (int64_t i = 0; i < yz.dim(1); ++i)
      CHECK(yz.values()[oc * yz.dim(1) + i] == doctest::Approx(b.values()[oc]));

  auto xg = rand_tensor(rng, {2, 6});
  auto wg = rand_tensor(rng, {3, 2, 3});
  auto bg = rand_tensor(rng, {3});
  auto rep = grad_check("conv1d", {xg, wg, bg}, [&] {
    return sum_all(square(conv1d(xg, wg, bg)));
  });
  CHECK(rep.pass);
}

TEST_CASE("maxpool over constant input returns constant; gradcheck") {
  auto x = Tensor<double>::full({2, 2, 4, 4}, 3.25);
  auto y = maxpool3d(x, {1, 2, 2}, {1, 2, 2});
  CHECK(y.shape() == Shape{2, 2, 2, 2});
  for (auto v : y.values()) CHECK(v == 3.25);

  Rng rng(47);
  auto xg = rand_tensor(rng, {2, 2, 4, 4});
  auto rep = grad_check("maxpool3d", {xg}, [&] {
    return sum_all(square(maxpool3d(xg, {2, 2, 2}, {1, 2, 2})));
  });
  CHECK(rep.pass);

  auto x1 = rand_tensor(rng, {3, 8});
  auto rep1 = grad_check("maxpool1d", {x1}, [&] {
    return sum_all(square(maxpool1d(x1, 2, 2)));
  });
  CHECK(rep1.pass);
}

TEST_CASE("deterministic forward under fixed inputs") {
  auto run = [] {
    Rng rng(99);
    auto x = rand_tensor(rng, {2, 2, 6, 6});
    auto w = rand_tensor(rng, {4, 2, 1, 3, 3});
    auto y = conv3d(x, w, Tensor<double>(), {1, 1, 1}, {0, 1, 1});
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  CHECK(run() == run());
}

TEST_CASE("parallel kernels match single-thread results exactly") {
  Rng rng(53);
  auto x = rand_tensor(rng, {4, 2, 8, 8});
  auto w = rand_tensor(rng, {6, 4, 1, 3, 3});
  set_threads(1);
  auto y1 = conv3d(x, w, Tensor<double>(), {1, 2, 2}, {0, 1, 1});
  set_threads(4);
  auto y2 = conv3d(x, w, Tensor<double>(), {1, 2, 2}, {0, 1, 1});
  set_threads(1);
  for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.values()[i] == y2.values()[i]);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(61);
  ParamStore<float> store;
  auto a = store.add("enc.w", init_he<float>(rng, {4, 3, 3}, 27));
  auto b = store.add("enc.b", init_normal<float>(rng, {4}, 0.5));
  CHECK_THROWS_AS(store.add("enc.w", Tensor<float>::zeros({1})), ContractError);

  auto tmp = std::filesystem::temp_directory_path() / "mmcaps_ckpt_test.bin";
  save_checkpoint(store, tmp.string());

  std::vector<float> va(a.values().begin(), a.values().end());
  std::vector<float> vb(b.values().begin(), b.values().end());
  for (auto& v : a.values()) v = 0;
  for (auto& v : b.values()) v = 0;
  load_checkpoint(store, tmp.string());
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == va[i]);
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(b.values()[i] == vb[i]);
  std::filesystem::remove(tmp);
}
