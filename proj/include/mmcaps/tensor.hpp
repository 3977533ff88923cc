#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mmcaps {

using Shape = std::vector<int64_t>;

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& m) : std::runtime_error("dimension error: " + m) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& m) : std::runtime_error("contract error: " + m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error("numeric error: " + m) {}
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

// Reverse-mode autodiff node. Tensors are shared handles to these; the
// graph is the parent chain. backward() walks it in reverse topological
// order. Interior gradients are scratch (reset per backward call); leaf
// gradients accumulate until explicitly zeroed.
template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;
  // op-local state (e.g. argmax indices) kept alive with the node
  std::vector<int64_t> aux;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(shape_numel(t.node_->shape), S(0));
    return t;
  }

  static Tensor full(Shape shape, S v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw DimensionError("tensor data size does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor scalar(S v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  std::span<S> values() { return node_->value; }
  std::span<const S> values() const { return node_->value; }
  std::span<const S> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  S item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    node_->requires_grad = b;
    return *this;
  }

  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

  // Detached copy of the values (constant, no graph edge).
  Tensor detached() const {
    return Tensor::from(shape(), std::vector<S>(node_->value.begin(), node_->value.end()));
  }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

namespace detail {

template <typename S>
Tensor<S> make_result(Shape shape, bool needs_grad) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  t.set_requires_grad(needs_grad);
  return t;
}

template <typename S>
void attach(Tensor<S>& out, std::vector<Tensor<S>> parents,
            std::function<void(TensorNode<S>&)> backward) {
  if (!out.requires_grad()) return;
  auto n = out.node();
  for (auto& p : parents) n->parents.push_back(p.node());
  n->backward = std::move(backward);
}

template <typename S>
bool any_requires(std::initializer_list<const Tensor<S>*> ts) {
  for (auto* t : ts)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  auto out = detail::make_result<S>(a.shape(), detail::any_requires<S>({&a, &b}));
  const S* pa = a.values().data();
  const S* pb = b.values().data();
  S* po = out.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
  detail::attach<S>(out, {a, b}, [an = a.node().get(), bn = b.node().get()](TensorNode<S>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  auto out = detail::make_result<S>(a.shape(), detail::any_requires<S>({&a, &b}));
  const S* pa = a.values().data();
  const S* pb = b.values().data();
  S* po = out.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
  detail::attach<S>(out, {a, b}, [an = a.node().get(), bn = b.node().get()](TensorNode<S>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  auto out = detail::make_result<S>(a.shape(), detail::any_requires<S>({&a, &b}));
  const S* pa = a.values().data();
  const S* pb = b.values().data();
  S* po = out.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
  detail::attach<S>(out, {a, b}, [an = a.node().get(), bn = b.node().get()](TensorNode<S>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "div");
  auto out = detail::make_result<S>(a.shape(), detail::any_requires<S>({&a, &b}));
  const S* pa = a.values().data();
  const S* pb = b.values().data();
  S* po = out.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] / pb[i];
  detail::attach<S>(out, {a, b}, [an = a.node().get(), bn = b.node().get()](TensorNode<S>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] / bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        bn->grad[i] -= self.grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// scalar ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  auto out = detail::make_result<S>(a.shape(), a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
  detail::attach<S>(out, {a}, [an = a.node().get()](TensorNode<S>& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
  return out;
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  auto out = detail::make_result<S>(a.shape(), a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
  detail::attach<S>(out, {a}, [an = a.node().get(), c](TensorNode<S>& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
  });
  return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return mul_scalar(a, S(-1));
}

// ---------------------------------------------------------------------------
// unary pointwise
// ---------------------------------------------------------------------------

namespace detail {

template <typename S, typename FwdFn, typename BwdFn>
Tensor<S> unary_op(const Tensor<S>& a, FwdFn fwd, BwdFn dfn) {
  auto out = make_result<S>(a.shape(), a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = fwd(pa[i]);
  attach<S>(out, {a}, [an = a.node().get(), dfn](TensorNode<S>& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * dfn(an->value[i], self.value[i]);
  });
  return out;
}

}  // namespace detail

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_op(
      a,
      [](S x) {
        if (x >= S(0)) {
          S e = std::exp(-x);
          return S(1) / (S(1) + e);
        }
        S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  return detail::unary_op(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  return detail::unary_op(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  return detail::unary_op(a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Tensor<S> square(const Tensor<S>& a) {
  return detail::unary_op(a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

// log(1 + e^x), overflow-safe; derivative is sigmoid(x).
template <typename S>
Tensor<S> softplus(const Tensor<S>& a) {
  return detail::unary_op(
      a,
      [](S x) {
        if (x > S(0)) return x + std::log1p(std::exp(-x));
        return std::log1p(std::exp(x));
      },
      [](S x, S) {
        if (x >= S(0)) {
          S e = std::exp(-x);
          return S(1) / (S(1) + e);
        }
        S e = std::exp(x);
        return e / (S(1) + e);
      });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  auto out = detail::make_result<S>({1}, a.requires_grad());
  S acc = 0;
  const S* pa = a.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
  out.values()[0] = acc;
  detail::attach<S>(out, {a}, [an = a.node().get()](TensorNode<S>& self) {
    an->ensure_grad();
    const S g = self.grad[0];
    for (auto& v : an->grad) v += g;
  });
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return mul_scalar(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

namespace detail {

// Decomposes a shape around `axis` into (outer, axis extent, inner).
inline void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& n, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  n = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

inline Shape drop_axis(const Shape& s, int axis) {
  Shape r;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) r.push_back(s[static_cast<size_t>(i)]);
  if (r.empty()) r.push_back(1);
  return r;
}

}  // namespace detail

template <typename S>
Tensor<S> sum_axis(const Tensor<S>& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw DimensionError("sum_axis: bad axis");
  int64_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  auto out = detail::make_result<S>(detail::drop_axis(a.shape(), axis), a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      S acc = 0;
      for (int64_t k = 0; k < n; ++k) acc += pa[(o * n + k) * inner + i];
      po[o * inner + i] = acc;
    }
  detail::attach<S>(out, {a}, [an = a.node().get(), outer, n, inner](TensorNode<S>& self) {
    an->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < n; ++k)
        for (int64_t i = 0; i < inner; ++i)
          an->grad[(o * n + k) * inner + i] += self.grad[o * inner + i];
  });
  return out;
}

template <typename S>
Tensor<S> mean_axis(const Tensor<S>& a, int axis) {
  return mul_scalar(sum_axis(a, axis), S(1) / static_cast<S>(a.dim(axis)));
}

// Max over one axis; ties resolve to the lowest index (gradient follows it).
template <typename S>
Tensor<S> max_axis(const Tensor<S>& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw DimensionError("max_axis: bad axis");
  int64_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  auto out = detail::make_result<S>(detail::drop_axis(a.shape(), axis), a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  auto& arg = out.node()->aux;
  arg.assign(static_cast<size_t>(outer * inner), 0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      S best = pa[(o * n) * inner + i];
      int64_t bk = 0;
      for (int64_t k = 1; k < n; ++k) {
        S v = pa[(o * n + k) * inner + i];
        if (v > best) {
          best = v;
          bk = k;
        }
      }
      po[o * inner + i] = best;
      arg[static_cast<size_t>(o * inner + i)] = bk;
    }
  detail::attach<S>(out, {a}, [an = a.node().get(), outer, n, inner](TensorNode<S>& self) {
    an->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        int64_t k = self.aux[static_cast<size_t>(o * inner + i)];
        an->grad[(o * n + k) * inner + i] += self.grad[o * inner + i];
      }
  });
  return out;
}

// Numerically stable softmax over `axis` with a dedicated backward.
template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw DimensionError("softmax: bad axis");
  int64_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  auto out = detail::make_result<S>(a.shape(), a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      S m = pa[(o * n) * inner + i];
      for (int64_t k = 1; k < n; ++k) m = std::max(m, pa[(o * n + k) * inner + i]);
      S z = 0;
      for (int64_t k = 0; k < n; ++k) {
        S e = std::exp(pa[(o * n + k) * inner + i] - m);
        po[(o * n + k) * inner + i] = e;
        z += e;
      }
      for (int64_t k = 0; k < n; ++k) po[(o * n + k) * inner + i] /= z;
    }
  detail::attach<S>(out, {a}, [an = a.node().get(), outer, n, inner](TensorNode<S>& self) {
    an->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        S dot = 0;
        for (int64_t k = 0; k < n; ++k) {
          int64_t idx = (o * n + k) * inner + i;
          dot += self.grad[idx] * self.value[idx];
        }
        for (int64_t k = 0; k < n; ++k) {
          int64_t idx = (o * n + k) * inner + i;
          an->grad[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto out = detail::make_result<S>(std::move(shape), a.requires_grad());
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  detail::attach<S>(out, {a}, [an = a.node().get()](TensorNode<S>& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
  return out;
}

// Inserts a new axis of extent n at position `axis` and replicates.
template <typename S>
Tensor<S> expand(const Tensor<S>& a, int axis, int64_t n) {
  if (axis < 0 || axis > a.rank()) throw DimensionError("expand: bad axis");
  Shape os = a.shape();
  os.insert(os.begin() + axis, n);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis; i < a.rank(); ++i) inner *= a.dim(i);
  auto out = detail::make_result<S>(os, a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = 0; k < n; ++k)
      std::copy(pa + o * inner, pa + (o + 1) * inner, po + (o * n + k) * inner);
  detail::attach<S>(out, {a}, [an = a.node().get(), outer, n, inner](TensorNode<S>& self) {
    an->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < n; ++k)
        for (int64_t i = 0; i < inner; ++i)
          an->grad[o * inner + i] += self.grad[(o * n + k) * inner + i];
  });
  return out;
}

template <typename S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& dims) {
  if (static_cast<int>(dims.size()) != a.rank()) throw DimensionError("permute: rank mismatch");
  const int r = a.rank();
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = a.dim(dims[static_cast<size_t>(i)]);
  // strides of the source, then of the destination walk
  std::vector<int64_t> astr(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    astr[static_cast<size_t>(i)] = astr[static_cast<size_t>(i + 1)] * a.dim(i + 1);
  std::vector<int64_t> walk(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) walk[static_cast<size_t>(i)] = astr[static_cast<size_t>(dims[static_cast<size_t>(i)])];

  auto out = detail::make_result<S>(os, a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  const int64_t total = a.numel();
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t src = 0;
  for (int64_t flat = 0; flat < total; ++flat) {
    po[flat] = pa[src];
    for (int d = r - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      src += walk[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
      src -= walk[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
  detail::attach<S>(out, {a}, [an = a.node().get(), os, walk, r](TensorNode<S>& self) {
    an->ensure_grad();
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t src = 0;
    const int64_t total = static_cast<int64_t>(self.grad.size());
    for (int64_t flat = 0; flat < total; ++flat) {
      an->grad[src] += self.grad[flat];
      for (int d = r - 1; d >= 0; --d) {
        idx[static_cast<size_t>(d)]++;
        src += walk[static_cast<size_t>(d)];
        if (idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
        src -= walk[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
        idx[static_cast<size_t>(d)] = 0;
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> narrow(const Tensor<S>& a, int axis, int64_t start, int64_t len) {
  if (axis < 0 || axis >= a.rank()) throw DimensionError("narrow: bad axis");
  if (start < 0 || len < 1 || start + len > a.dim(axis)) throw DimensionError("narrow: bad range");
  int64_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  Shape os = a.shape();
  os[static_cast<size_t>(axis)] = len;
  auto out = detail::make_result<S>(os, a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = 0; k < len; ++k)
      std::copy(pa + (o * n + start + k) * inner, pa + (o * n + start + k + 1) * inner,
                po + (o * len + k) * inner);
  detail::attach<S>(out, {a},
                    [an = a.node().get(), outer, n, inner, start, len](TensorNode<S>& self) {
                      an->ensure_grad();
                      for (int64_t o = 0; o < outer; ++o)
                        for (int64_t k = 0; k < len; ++k)
                          for (int64_t i = 0; i < inner; ++i)
                            an->grad[(o * n + start + k) * inner + i] +=
                                self.grad[(o * len + k) * inner + i];
                    });
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  const int r = parts[0].rank();
  if (axis < 0 || axis >= r) throw DimensionError("concat: bad axis");
  int64_t total_axis = 0;
  for (auto& p : parts) {
    if (p.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != parts[0].dim(i)) throw DimensionError("concat: shape mismatch");
    total_axis += p.dim(axis);
  }
  Shape os = parts[0].shape();
  os[static_cast<size_t>(axis)] = total_axis;
  bool req = false;
  for (auto& p : parts) req = req || p.requires_grad();
  auto out = detail::make_result<S>(os, req);

  int64_t outer, n_unused, inner;
  detail::axis_split(os, axis, outer, n_unused, inner);
  S* po = out.values().data();
  int64_t offset = 0;
  std::vector<int64_t> offsets;
  for (auto& p : parts) {
    offsets.push_back(offset);
    const S* pp = p.values().data();
    int64_t pn = p.dim(axis);
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pp + o * pn * inner, pp + (o + 1) * pn * inner,
                po + (o * total_axis + offset) * inner);
    offset += pn;
  }
  if (req) {
    std::vector<TensorNode<S>*> raw;
    std::vector<int64_t> lens;
    for (auto& p : parts) {
      raw.push_back(p.node().get());
      lens.push_back(p.dim(axis));
    }
    detail::attach<S>(out, parts,
                      [raw, lens, offsets, outer, inner, total_axis](TensorNode<S>& self) {
                        for (size_t pi = 0; pi < raw.size(); ++pi) {
                          if (!raw[pi]->requires_grad) continue;
                          raw[pi]->ensure_grad();
                          int64_t pn = lens[pi];
                          for (int64_t o = 0; o < outer; ++o)
                            for (int64_t k = 0; k < pn; ++k)
                              for (int64_t i = 0; i < inner; ++i)
                                raw[pi]->grad[(o * pn + k) * inner + i] +=
                                    self.grad[(o * total_axis + offsets[pi] + k) * inner + i];
                        }
                      });
  }
  return out;
}

// Zeroes every slice along `axis` except keep_index. Masked entries are
// written as exact +0.0 so downstream results cannot depend on them bitwise.
template <typename S>
Tensor<S> zero_except(const Tensor<S>& a, int axis, int64_t keep_index) {
  if (axis < 0 || axis >= a.rank()) throw DimensionError("zero_except: bad axis");
  if (keep_index < 0 || keep_index >= a.dim(axis))
    throw ContractError("zero_except: index " + std::to_string(keep_index) + " out of range");
  int64_t outer, n, inner;
  detail::axis_split(a.shape(), axis, outer, n, inner);
  auto out = detail::make_result<S>(a.shape(), a.requires_grad());
  const S* pa = a.values().data();
  S* po = out.values().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i)
      po[(o * n + keep_index) * inner + i] = pa[(o * n + keep_index) * inner + i];
  detail::attach<S>(out, {a},
                    [an = a.node().get(), outer, n, inner, keep_index](TensorNode<S>& self) {
                      an->ensure_grad();
                      for (int64_t o = 0; o < outer; ++o)
                        for (int64_t i = 0; i < inner; ++i)
                          an->grad[(o * n + keep_index) * inner + i] +=
                              self.grad[(o * n + keep_index) * inner + i];
                    });
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: bad shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = detail::make_result<S>({m, n}, detail::any_requires<S>({&a, &b}));
  const S* pa = a.values().data();
  const S* pb = b.values().data();
  S* po = out.values().data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      S av = pa[i * k + kk];
      for (int64_t j = 0; j < n; ++j) po[i * n + j] += av * pb[kk * n + j];
    }
  detail::attach<S>(out, {a, b},
                    [an = a.node().get(), bn = b.node().get(), m, k, n](TensorNode<S>& self) {
                      if (an->requires_grad) {
                        an->ensure_grad();
                        for (int64_t i = 0; i < m; ++i)
                          for (int64_t j = 0; j < n; ++j) {
                            S g = self.grad[i * n + j];
                            for (int64_t kk = 0; kk < k; ++kk)
                              an->grad[i * k + kk] += g * bn->value[kk * n + j];
                          }
                      }
                      if (bn->requires_grad) {
                        bn->ensure_grad();
                        for (int64_t i = 0; i < m; ++i)
                          for (int64_t kk = 0; kk < k; ++kk) {
                            S av = an->value[i * k + kk];
                            for (int64_t j = 0; j < n; ++j)
                              bn->grad[kk * n + j] += av * self.grad[i * n + j];
                          }
                      }
                    });
  return out;
}

// x[in] -> [out], or x[batch,in] -> [batch,out]. weight is [out,in].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (weight.rank() != 2) throw DimensionError("linear: weight must be 2-d");
  const int64_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f))
    throw DimensionError("linear: bias shape mismatch");
  int64_t batch;
  Shape os;
  if (x.rank() == 1) {
    if (x.dim(0) != in_f) throw DimensionError("linear: input features mismatch");
    batch = 1;
    os = {out_f};
  } else if (x.rank() == 2) {
    if (x.dim(1) != in_f) throw DimensionError("linear: input features mismatch");
    batch = x.dim(0);
    os = {batch, out_f};
  } else {
    throw DimensionError("linear: input must be 1-d or 2-d");
  }
  bool req = detail::any_requires<S>({&x, &weight}) || (bias.defined() && bias.requires_grad());
  auto out = detail::make_result<S>(os, req);
  const S* px = x.values().data();
  const S* pw = weight.values().data();
  S* po = out.values().data();
  for (int64_t bidx = 0; bidx < batch; ++bidx)
    for (int64_t o = 0; o < out_f; ++o) {
      S acc = bias.defined() ? bias.values()[static_cast<size_t>(o)] : S(0);
      const S* wrow = pw + o * in_f;
      const S* xrow = px + bidx * in_f;
      for (int64_t i = 0; i < in_f; ++i) acc += wrow[i] * xrow[i];
      po[bidx * out_f + o] = acc;
    }
  std::vector<Tensor<S>> parents = {x, weight};
  if (bias.defined()) parents.push_back(bias);
  detail::attach<S>(
      out, parents,
      [xn = x.node().get(), wn = weight.node().get(),
       bn = bias.defined() ? bias.node().get() : nullptr, batch, out_f, in_f](TensorNode<S>& self) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (int64_t b = 0; b < batch; ++b)
            for (int64_t o = 0; o < out_f; ++o) {
              S g = self.grad[b * out_f + o];
              for (int64_t i = 0; i < in_f; ++i) xn->grad[b * in_f + i] += g * wn->value[o * in_f + i];
            }
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          for (int64_t b = 0; b < batch; ++b)
            for (int64_t o = 0; o < out_f; ++o) {
              S g = self.grad[b * out_f + o];
              for (int64_t i = 0; i < in_f; ++i) wn->grad[o * in_f + i] += g * xn->value[b * in_f + i];
            }
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t b = 0; b < batch; ++b)
            for (int64_t o = 0; o < out_f; ++o) bn->grad[o] += self.grad[b * out_f + o];
        }
      });
  return out;
}

// Row lookup into table[V,D]; gradient scatters into the used rows only.
template <typename S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& indices) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be 2-d");
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int idx : indices)
    if (idx < 0 || idx >= v) throw ContractError("embedding: index out of range");
  auto out = detail::make_result<S>({static_cast<int64_t>(indices.size()), d}, table.requires_grad());
  const S* pt = table.values().data();
  S* po = out.values().data();
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy(pt + indices[i] * d, pt + (indices[i] + 1) * d, po + static_cast<int64_t>(i) * d);
  detail::attach<S>(out, {table}, [tn = table.node().get(), indices, d](TensorNode<S>& self) {
    tn->ensure_grad();
    for (size_t i = 0; i < indices.size(); ++i)
      for (int64_t j = 0; j < d; ++j)
        tn->grad[indices[i] * d + j] += self.grad[static_cast<int64_t>(i) * d + j];
  });
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  // iterative post-order DFS
  std::vector<TensorNode<S>*> order;
  std::unordered_set<TensorNode<S>*> seen;
  std::vector<std::pair<TensorNode<S>*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      TensorNode<S>* p = node->parents[child].get();
      ++child;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are scratch for this call; leaf grads accumulate.
  for (auto* n : order) {
    if (n->is_leaf())
      n->ensure_grad();
    else
      n->grad.assign(n->value.size(), S(0));
  }
  loss.node()->grad[0] = S(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<S>* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// operator sugar
template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}

}  // namespace mmcaps
