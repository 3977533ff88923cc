#pragma once

#include <array>
#include <limits>

#include "mmcaps/parallel.hpp"
#include "mmcaps/tensor.hpp"

namespace mmcaps {

using Dims3 = std::array<int64_t, 3>;

namespace detail {

// Valid loop indices q with 0 <= q*stride + off < bound, q < n_loop.
inline void conv_range(int64_t n_loop, int64_t bound, int64_t stride, int64_t off, int64_t& lo,
                       int64_t& hi) {
  lo = 0;
  if (off < 0) lo = (-off + stride - 1) / stride;
  int64_t max_q = bound - 1 - off;
  hi = max_q < 0 ? lo : std::min(n_loop, max_q / stride + 1);
  if (hi < lo) hi = lo;
}

struct ConvGeom {
  int64_t ci, ti, hi, wi;      // input
  int64_t co, kt, kh, kw;      // kernel
  int64_t to, ho, wo;          // output
  int64_t st, sh, sw;          // stride
  int64_t pt, ph, pw;          // padding
  int64_t in_plane() const { return ti * hi * wi; }
  int64_t out_plane() const { return to * ho * wo; }
  int64_t kvol() const { return kt * kh * kw; }
};

// out[oc,ot,oh,ow] = bias[oc] + sum_{ic,k} w[oc,ic,k] * x[ic, ot*st+kt-pt, ...]
// Parallel over output channels; per-element accumulation order is fixed.
template <typename S>
void conv3d_forward(const S* __restrict__ x, const S* __restrict__ w, const S* bias,
                    S* __restrict__ out, const ConvGeom& g) {
  parallel_for(g.co, [&](int64_t oc_b, int64_t oc_e) {
    for (int64_t oc = oc_b; oc < oc_e; ++oc) {
      S* ob = out + oc * g.out_plane();
      const S bval = bias ? bias[oc] : S(0);
      for (int64_t i = 0; i < g.out_plane(); ++i) ob[i] = bval;
      for (int64_t ic = 0; ic < g.ci; ++ic) {
        const S* xc = x + ic * g.in_plane();
        const S* wc = w + (oc * g.ci + ic) * g.kvol();
        for (int64_t dt = 0; dt < g.kt; ++dt)
          for (int64_t dh = 0; dh < g.kh; ++dh)
            for (int64_t dw = 0; dw < g.kw; ++dw) {
              const S wv = wc[(dt * g.kh + dh) * g.kw + dw];
              int64_t ot_lo, ot_hi, oh_lo, oh_hi, ow_lo, ow_hi;
              conv_range(g.to, g.ti, g.st, dt - g.pt, ot_lo, ot_hi);
              conv_range(g.ho, g.hi, g.sh, dh - g.ph, oh_lo, oh_hi);
              conv_range(g.wo, g.wi, g.sw, dw - g.pw, ow_lo, ow_hi);
              for (int64_t ot = ot_lo; ot < ot_hi; ++ot) {
                const int64_t it = ot * g.st + dt - g.pt;
                for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                  const int64_t ih = oh * g.sh + dh - g.ph;
                  const S* __restrict__ xrow = xc + (it * g.hi + ih) * g.wi;
                  S* __restrict__ orow = ob + (ot * g.ho + oh) * g.wo;
                  if (g.sw == 1) {
                    const int64_t iw0 = dw - g.pw;
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow + iw0];
                  } else {
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                      orow[ow] += wv * xrow[ow * g.sw + dw - g.pw];
                  }
                }
              }
            }
      }
    }
  });
}

// gx[ic,...] += sum_{oc,k} w[oc,ic,k] * gout[oc, out pos]. Parallel over input channels.
template <typename S>
void conv3d_backward_input(const S* __restrict__ gout, const S* __restrict__ w,
                           S* __restrict__ gx, const ConvGeom& g) {
  parallel_for(g.ci, [&](int64_t ic_b, int64_t ic_e) {
    for (int64_t ic = ic_b; ic < ic_e; ++ic) {
      S* gxc = gx + ic * g.in_plane();
      for (int64_t oc = 0; oc < g.co; ++oc) {
        const S* goc = gout + oc * g.out_plane();
        const S* wc = w + (oc * g.ci + ic) * g.kvol();
        for (int64_t dt = 0; dt < g.kt; ++dt)
          for (int64_t dh = 0; dh < g.kh; ++dh)
            for (int64_t dw = 0; dw < g.kw; ++dw) {
              const S wv = wc[(dt * g.kh + dh) * g.kw + dw];
              int64_t ot_lo, ot_hi, oh_lo, oh_hi, ow_lo, ow_hi;
              conv_range(g.to, g.ti, g.st, dt - g.pt, ot_lo, ot_hi);
              conv_range(g.ho, g.hi, g.sh, dh - g.ph, oh_lo, oh_hi);
              conv_range(g.wo, g.wi, g.sw, dw - g.pw, ow_lo, ow_hi);
              for (int64_t ot = ot_lo; ot < ot_hi; ++ot) {
                const int64_t it = ot * g.st + dt - g.pt;
                for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                  const int64_t ih = oh * g.sh + dh - g.ph;
                  S* __restrict__ gxrow = gxc + (it * g.hi + ih) * g.wi;
                  const S* __restrict__ gorow = goc + (ot * g.ho + oh) * g.wo;
                  if (g.sw == 1) {
                    const int64_t iw0 = dw - g.pw;
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow) gxrow[ow + iw0] += wv * gorow[ow];
                  } else {
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                      gxrow[ow * g.sw + dw - g.pw] += wv * gorow[ow];
                  }
                }
              }
            }
      }
    }
  });
}

// gw[oc,ic,k] += sum over output positions. Parallel over output channels.
template <typename S>
void conv3d_backward_weight(const S* __restrict__ x, const S* __restrict__ gout,
                            S* __restrict__ gw, const ConvGeom& g) {
  parallel_for(g.co, [&](int64_t oc_b, int64_t oc_e) {
    for (int64_t oc = oc_b; oc < oc_e; ++oc) {
      const S* goc = gout + oc * g.out_plane();
      for (int64_t ic = 0; ic < g.ci; ++ic) {
        const S* xc = x + ic * g.in_plane();
        S* gwc = gw + (oc * g.ci + ic) * g.kvol();
        for (int64_t dt = 0; dt < g.kt; ++dt)
          for (int64_t dh = 0; dh < g.kh; ++dh)
            for (int64_t dw = 0; dw < g.kw; ++dw) {
              int64_t ot_lo, ot_hi, oh_lo, oh_hi, ow_lo, ow_hi;
              conv_range(g.to, g.ti, g.st, dt - g.pt, ot_lo, ot_hi);
              conv_range(g.ho, g.hi, g.sh, dh - g.ph, oh_lo, oh_hi);
              conv_range(g.wo, g.wi, g.sw, dw - g.pw, ow_lo, ow_hi);
              S acc = 0;
              for (int64_t ot = ot_lo; ot < ot_hi; ++ot) {
                const int64_t it = ot * g.st + dt - g.pt;
                for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                  const int64_t ih = oh * g.sh + dh - g.ph;
                  const S* __restrict__ xrow = xc + (it * g.hi + ih) * g.wi;
                  const S* __restrict__ gorow = goc + (ot * g.ho + oh) * g.wo;
                  if (g.sw == 1) {
                    const int64_t iw0 = dw - g.pw;
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += gorow[ow] * xrow[ow + iw0];
                  } else {
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                      acc += gorow[ow] * xrow[ow * g.sw + dw - g.pw];
                  }
                }
              }
              gwc[(dt * g.kh + dh) * g.kw + dw] += acc;
            }
      }
    }
  });
}

// Transposed conv geometry: x[ci,ti,hi,wi], w[ci,co,k], out[co,to,ho,wo],
// to = (ti-1)*st - 2*pt + kt + output_padding.
// out[oc, q*st+k-p] += w[ic,oc,k] * x[ic,q]; parallel over output channels.
template <typename S>
void tconv3d_forward(const S* __restrict__ x, const S* __restrict__ w, const S* bias,
                     S* __restrict__ out, const ConvGeom& g) {
  parallel_for(g.co, [&](int64_t oc_b, int64_t oc_e) {
    for (int64_t oc = oc_b; oc < oc_e; ++oc) {
      S* ob = out + oc * g.out_plane();
      const S bval = bias ? bias[oc] : S(0);
      for (int64_t i = 0; i < g.out_plane(); ++i) ob[i] = bval;
      for (int64_t ic = 0; ic < g.ci; ++ic) {
        const S* xc = x + ic * g.in_plane();
        const S* wc = w + (ic * g.co + oc) * g.kvol();
        for (int64_t dt = 0; dt < g.kt; ++dt)
          for (int64_t dh = 0; dh < g.kh; ++dh)
            for (int64_t dw = 0; dw < g.kw; ++dw) {
              const S wv = wc[(dt * g.kh + dh) * g.kw + dw];
              int64_t qt_lo, qt_hi, qh_lo, qh_hi, qw_lo, qw_hi;
              conv_range(g.ti, g.to, g.st, dt - g.pt, qt_lo, qt_hi);
              conv_range(g.hi, g.ho, g.sh, dh - g.ph, qh_lo, qh_hi);
              conv_range(g.wi, g.wo, g.sw, dw - g.pw, qw_lo, qw_hi);
              for (int64_t qt = qt_lo; qt < qt_hi; ++qt) {
                const int64_t t = qt * g.st + dt - g.pt;
                for (int64_t qh = qh_lo; qh < qh_hi; ++qh) {
                  const int64_t h = qh * g.sh + dh - g.ph;
                  const S* __restrict__ xrow = xc + (qt * g.hi + qh) * g.wi;
                  S* __restrict__ orow = ob + (t * g.ho + h) * g.wo;
                  if (g.sw == 1) {
                    const int64_t w0 = dw - g.pw;
                    for (int64_t qw = qw_lo; qw < qw_hi; ++qw) orow[qw + w0] += wv * xrow[qw];
                  } else {
                    for (int64_t qw = qw_lo; qw < qw_hi; ++qw)
                      orow[qw * g.sw + dw - g.pw] += wv * xrow[qw];
                  }
                }
              }
            }
      }
    }
  });
}

// gx[ic,q] += sum_{oc,k} w[ic,oc,k] * gout[oc, q*st+k-p]; parallel over input channels.
template <typename S>
void tconv3d_backward_input(const S* __restrict__ gout, const S* __restrict__ w,
                            S* __restrict__ gx, const ConvGeom& g) {
  parallel_for(g.ci, [&](int64_t ic_b, int64_t ic_e) {
    for (int64_t ic = ic_b; ic < ic_e; ++ic) {
      S* gxc = gx + ic * g.in_plane();
      for (int64_t oc = 0; oc < g.co; ++oc) {
        const S* goc = gout + oc * g.out_plane();
        const S* wc = w + (ic * g.co + oc) * g.kvol();
        for (int64_t dt = 0; dt < g.kt; ++dt)
          for (int64_t dh = 0; dh < g.kh; ++dh)
            for (int64_t dw = 0; dw < g.kw; ++dw) {
              const S wv = wc[(dt * g.kh + dh) * g.kw + dw];
              int64_t qt_lo, qt_hi, qh_lo, qh_hi, qw_lo, qw_hi;
              conv_range(g.ti, g.to, g.st, dt - g.pt, qt_lo, qt_hi);
              conv_range(g.hi, g.ho, g.sh, dh - g.ph, qh_lo, qh_hi);
              conv_range(g.wi, g.wo, g.sw, dw - g.pw, qw_lo, qw_hi);
              for (int64_t qt = qt_lo; qt < qt_hi; ++qt) {
                const int64_t t = qt * g.st + dt - g.pt;
                for (int64_t qh = qh_lo; qh < qh_hi; ++qh) {
                  const int64_t h = qh * g.sh + dh - g.ph;
                  S* __restrict__ gxrow = gxc + (qt * g.hi + qh) * g.wi;
                  const S* __restrict__ gorow = goc + (t * g.ho + h) * g.wo;
                  if (g.sw == 1) {
                    const int64_t w0 = dw - g.pw;
                    for (int64_t qw = qw_lo; qw < qw_hi; ++qw) gxrow[qw] += wv * gorow[qw + w0];
                  } else {
                    for (int64_t qw = qw_lo; qw < qw_hi; ++qw)
                      gxrow[qw] += wv * gorow[qw * g.sw + dw - g.pw];
                  }
                }
              }
            }
      }
    }
  });
}

// gw[ic,oc,k] += sum_q x[ic,q] * gout[oc, q*st+k-p]; parallel over input channels.
template <typename S>
void tconv3d_backward_weight(const S* __restrict__ x, const S* __restrict__ gout,
                             S* __restrict__ gw, const ConvGeom& g) {
  parallel_for(g.ci, [&](int64_t ic_b, int64_t ic_e) {
    for (int64_t ic = ic_b; ic < ic_e; ++ic) {
      const S* xc = x + ic * g.in_plane();
      for (int64_t oc = 0; oc < g.co; ++oc) {
        const S* goc = gout + oc * g.out_plane();
        S* gwc = gw + (ic * g.co + oc) * g.kvol();
        for (int64_t dt = 0; dt < g.kt; ++dt)
          for (int64_t dh = 0; dh < g.kh; ++dh)
            for (int64_t dw = 0; dw < g.kw; ++dw) {
              int64_t qt_lo, qt_hi, qh_lo, qh_hi, qw_lo, qw_hi;
              conv_range(g.ti, g.to, g.st, dt - g.pt, qt_lo, qt_hi);
              conv_range(g.hi, g.ho, g.sh, dh - g.ph, qh_lo, qh_hi);
              conv_range(g.wi, g.wo, g.sw, dw - g.pw, qw_lo, qw_hi);
              S acc = 0;
              for (int64_t qt = qt_lo; qt < qt_hi; ++qt) {
                const int64_t t = qt * g.st + dt - g.pt;
                for (int64_t qh = qh_lo; qh < qh_hi; ++qh) {
                  const int64_t h = qh * g.sh + dh - g.ph;
                  const S* __restrict__ xrow = xc + (qt * g.hi + qh) * g.wi;
                  const S* __restrict__ gorow = goc + (t * g.ho + h) * g.wo;
                  if (g.sw == 1) {
                    const int64_t w0 = dw - g.pw;
                    for (int64_t qw = qw_lo; qw < qw_hi; ++qw) acc += xrow[qw] * gorow[qw + w0];
                  } else {
                    for (int64_t qw = qw_lo; qw < qw_hi; ++qw)
                      acc += xrow[qw] * gorow[qw * g.sw + dw - g.pw];
                  }
                }
              }
              gwc[(dt * g.kh + dh) * g.kw + dw] += acc;
            }
      }
    }
  });
}

template <typename S>
void accumulate_bias_grad(const S* gout, S* gb, int64_t co, int64_t plane) {
  for (int64_t oc = 0; oc < co; ++oc) {
    S acc = 0;
    const S* p = gout + oc * plane;
    for (int64_t i = 0; i < plane; ++i) acc += p[i];
    gb[oc] += acc;
  }
}

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad,
                               const char* what) {
  if (stride < 1) throw ContractError(std::string(what) + ": stride must be >= 1");
  int64_t span = in + 2 * pad - k;
  if (span < 0) throw DimensionError(std::string(what) + ": kernel does not fit padded input");
  return span / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// autodiff wrappers
// ---------------------------------------------------------------------------

// x[Ci,T,H,W], weight[Co,Ci,kt,kh,kw], optional bias[Co].
template <typename S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                 Dims3 stride = {1, 1, 1}, Dims3 padding = {0, 0, 0}) {
  if (x.rank() != 4) throw DimensionError("conv3d: input must be [C,T,H,W]");
  if (weight.rank() != 5) throw DimensionError("conv3d: weight must be [Co,Ci,kt,kh,kw]");
  if (weight.dim(1) != x.dim(0))
    throw DimensionError("conv3d: input channels " + std::to_string(x.dim(0)) +
                         " != weight channels " + std::to_string(weight.dim(1)));
  detail::ConvGeom g;
  g.ci = x.dim(0), g.ti = x.dim(1), g.hi = x.dim(2), g.wi = x.dim(3);
  g.co = weight.dim(0), g.kt = weight.dim(2), g.kh = weight.dim(3), g.kw = weight.dim(4);
  g.st = stride[0], g.sh = stride[1], g.sw = stride[2];
  g.pt = padding[0], g.ph = padding[1], g.pw = padding[2];
  g.to = detail::conv_out_extent(g.ti, g.kt, g.st, g.pt, "conv3d");
  g.ho = detail::conv_out_extent(g.hi, g.kh, g.sh, g.ph, "conv3d");
  g.wo = detail::conv_out_extent(g.wi, g.kw, g.sw, g.pw, "conv3d");
  if (bias.defined() && bias.numel() != g.co) throw DimensionError("conv3d: bias size mismatch");

  bool req = detail::any_requires<S>({&x, &weight}) || (bias.defined() && bias.requires_grad());
  auto out = detail::make_result<S>({g.co, g.to, g.ho, g.wo}, req);
  detail::conv3d_forward(x.values().data(), weight.values().data(),
                         bias.defined() ? bias.values().data() : nullptr, out.values().data(), g);

  std::vector<Tensor<S>> parents = {x, weight};
  if (bias.defined()) parents.push_back(bias);
  detail::attach<S>(out, parents,
                    [xn = x.node().get(), wn = weight.node().get(),
                     bn = bias.defined() ? bias.node().get() : nullptr, g](TensorNode<S>& self) {
                      if (xn->requires_grad) {
                        xn->ensure_grad();
                        detail::conv3d_backward_input(self.grad.data(), wn->value.data(),
                                                      xn->grad.data(), g);
                      }
                      if (wn->requires_grad) {
                        wn->ensure_grad();
                        detail::conv3d_backward_weight(xn->value.data(), self.grad.data(),
                                                       wn->grad.data(), g);
                      }
                      if (bn && bn->requires_grad) {
                        bn->ensure_grad();
                        detail::accumulate_bias_grad(self.grad.data(), bn->grad.data(), g.co,
                                                     g.out_plane());
                      }
                    });
  return out;
}

// x[Ci,T,H,W], weight[Ci,Co,kt,kh,kw], optional bias[Co].
template <typename S>
Tensor<S> conv_transpose3d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                           Dims3 stride = {1, 1, 1}, Dims3 padding = {0, 0, 0},
                           Dims3 output_padding = {0, 0, 0}) {
  if (x.rank() != 4) throw DimensionError("conv_transpose3d: input must be [C,T,H,W]");
  if (weight.rank() != 5) throw DimensionError("conv_transpose3d: weight must be [Ci,Co,kt,kh,kw]");
  if (weight.dim(0) != x.dim(0))
    throw DimensionError("conv_transpose3d: input channels " + std::to_string(x.dim(0)) +
                         " != weight channels " + std::to_string(weight.dim(0)));
  detail::ConvGeom g;
  g.ci = x.dim(0), g.ti = x.dim(1), g.hi = x.dim(2), g.wi = x.dim(3);
  g.co = weight.dim(1), g.kt = weight.dim(2), g.kh = weight.dim(3), g.kw = weight.dim(4);
  g.st = stride[0], g.sh = stride[1], g.sw = stride[2];
  g.pt = padding[0], g.ph = padding[1], g.pw = padding[2];
  for (int i = 0; i < 3; ++i) {
    if (stride[i] < 1) throw ContractError("conv_transpose3d: stride must be >= 1");
    if (output_padding[i] < 0 || output_padding[i] >= stride[i])
      throw ContractError("conv_transpose3d: output_padding must be in [0, stride)");
  }
  g.to = (g.ti - 1) * g.st - 2 * g.pt + g.kt + output_padding[0];
  g.ho = (g.hi - 1) * g.sh - 2 * g.ph + g.kh + output_padding[1];
  g.wo = (g.wi - 1) * g.sw - 2 * g.pw + g.kw + output_padding[2];
  if (g.to < 1 || g.ho < 1 || g.wo < 1)
    throw DimensionError("conv_transpose3d: empty output extent");
  if (bias.defined() && bias.numel() != g.co)
    throw DimensionError("conv_transpose3d: bias size mismatch");

  bool req = detail::any_requires<S>({&x, &weight}) || (bias.defined() && bias.requires_grad());
  auto out = detail::make_result<S>({g.co, g.to, g.ho, g.wo}, req);
  detail::tconv3d_forward(x.values().data(), weight.values().data(),
                          bias.defined() ? bias.values().data() : nullptr, out.values().data(), g);

  std::vector<Tensor<S>> parents = {x, weight};
  if (bias.defined()) parents.push_back(bias);
  detail::attach<S>(out, parents,
                    [xn = x.node().get(), wn = weight.node().get(),
                     bn = bias.defined() ? bias.node().get() : nullptr, g](TensorNode<S>& self) {
                      if (xn->requires_grad) {
                        xn->ensure_grad();
                        detail::tconv3d_backward_input(self.grad.data(), wn->value.data(),
                                                       xn->grad.data(), g);
                      }
                      if (wn->requires_grad) {
                        wn->ensure_grad();
                        detail::tconv3d_backward_weight(xn->value.data(), self.grad.data(),
                                                        wn->grad.data(), g);
                      }
                      if (bn && bn->requires_grad) {
                        bn->ensure_grad();
                        detail::accumulate_bias_grad(self.grad.data(), bn->grad.data(), g.co,
                                                     g.out_plane());
                      }
                    });
  return out;
}

// x[Ci,L], weight[Co,Ci,k]: one spatial axis, same kernels under the hood.
template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                 int64_t stride = 1, int64_t padding = 0) {
  if (x.rank() != 2) throw DimensionError("conv1d: input must be [C,L]");
  if (weight.rank() != 3) throw DimensionError("conv1d: weight must be [Co,Ci,k]");
  auto x3 = reshape(x, {x.dim(0), 1, 1, x.dim(1)});
  auto w5 = reshape(weight, {weight.dim(0), weight.dim(1), 1, 1, weight.dim(2)});
  auto out = conv3d(x3, w5, bias, {1, 1, stride}, {0, 0, padding});
  return reshape(out, {out.dim(0), out.dim(3)});
}

// x[C,T,H,W], window k, stride s. Ties go to the first (lowest flat index) max.
template <typename S>
Tensor<S> maxpool3d(const Tensor<S>& x, Dims3 k, Dims3 s) {
  if (x.rank() != 4) throw DimensionError("maxpool3d: input must be [C,T,H,W]");
  const int64_t C = x.dim(0), Ti = x.dim(1), Hi = x.dim(2), Wi = x.dim(3);
  const int64_t To = detail::conv_out_extent(Ti, k[0], s[0], 0, "maxpool3d");
  const int64_t Ho = detail::conv_out_extent(Hi, k[1], s[1], 0, "maxpool3d");
  const int64_t Wo = detail::conv_out_extent(Wi, k[2], s[2], 0, "maxpool3d");
  auto out = detail::make_result<S>({C, To, Ho, Wo}, x.requires_grad());
  auto& arg = out.node()->aux;
  arg.assign(static_cast<size_t>(C * To * Ho * Wo), 0);
  const S* px = x.values().data();
  S* po = out.values().data();
  const int64_t in_plane = Ti * Hi * Wi, out_plane = To * Ho * Wo;
  parallel_for(C, [&](int64_t cb, int64_t ce) {
    for (int64_t c = cb; c < ce; ++c)
      for (int64_t ot = 0; ot < To; ++ot)
        for (int64_t oh = 0; oh < Ho; ++oh)
          for (int64_t ow = 0; ow < Wo; ++ow) {
            S best = -std::numeric_limits<S>::infinity();
            int64_t bidx = -1;
            for (int64_t dt = 0; dt < k[0]; ++dt)
              for (int64_t dh = 0; dh < k[1]; ++dh)
                for (int64_t dw = 0; dw < k[2]; ++dw) {
                  int64_t idx = c * in_plane +
                                ((ot * s[0] + dt) * Hi + (oh * s[1] + dh)) * Wi + ow * s[2] + dw;
                  if (px[idx] > best) {
                    best = px[idx];
                    bidx = idx;
                  }
                }
            int64_t oidx = c * out_plane + (ot * Ho + oh) * Wo + ow;
            po[oidx] = best;
            arg[static_cast<size_t>(oidx)] = bidx;
          }
  });
  detail::attach<S>(out, {x}, [xn = x.node().get()](TensorNode<S>& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[self.aux[i]] += self.grad[i];
  });
  return out;
}

template <typename S>
Tensor<S> maxpool1d(const Tensor<S>& x, int64_t k, int64_t s) {
  if (x.rank() != 2) throw DimensionError("maxpool1d: input must be [C,L]");
  auto x3 = reshape(x, {x.dim(0), 1, 1, x.dim(1)});
  auto out = maxpool3d(x3, {1, 1, k}, {1, 1, s});
  return reshape(out, {out.dim(0), out.dim(3)});
}

}  // namespace mmcaps
