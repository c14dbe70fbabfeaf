#pragma once

// Differentiable ops over Tape<T>. Image tensors are [N, C, H, W]; dense inputs
// are [N, F]. Backward closures only run when the output needs a gradient and
// only fill input gradients that are requested.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/core/random.hpp"
#include "seisinv/diffcore/tape.hpp"

namespace seisinv::ad {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

/// Elementwise map with derivative dfdx(x, y).
template <class T, class F, class D>
Var<T> unary(Var<T> x, F f, D dfdx) {
  auto& tape = *x.tape;
  const auto& xv = x.value();
  Tensor<T> y(xv.dims());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.needs_grad(x), [&tape, x, out, dfdx] {
    const auto& g = tape.grad(out);
    const auto& xv = tape.value(x);
    const auto& yv = tape.value(out);
    auto& gx = tape.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace detail

// --- elementwise -------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tape = *a.tape;
  detail::same_shape(a.dims(), b.dims(), "add");
  Tensor<T> y(a.dims());
  const auto &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.any_needs_grad({a, b}), [&tape, a, b, out] {
    const auto& g = tape.grad(out);
    for (auto v : {a, b}) {
      if (!tape.needs_grad(v)) continue;
      auto& gv = tape.grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tape = *a.tape;
  detail::same_shape(a.dims(), b.dims(), "sub");
  Tensor<T> y(a.dims());
  const auto &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.any_needs_grad({a, b}), [&tape, a, b, out] {
    const auto& g = tape.grad(out);
    if (tape.needs_grad(a)) {
      auto& ga = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tape.needs_grad(b)) {
      auto& gb = tape.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tape = *a.tape;
  detail::same_shape(a.dims(), b.dims(), "mul");
  Tensor<T> y(a.dims());
  const auto &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.any_needs_grad({a, b}), [&tape, a, b, out] {
    const auto& g = tape.grad(out);
    const auto &av = tape.value(a), &bv = tape.value(b);
    if (tape.needs_grad(a)) {
      auto& ga = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tape.needs_grad(b)) {
      auto& gb = tape.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  auto& tape = *a.tape;
  detail::same_shape(a.dims(), b.dims(), "div");
  Tensor<T> y(a.dims());
  const auto &av = a.value(), &bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] / bv[i];
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.any_needs_grad({a, b}), [&tape, a, b, out] {
    const auto& g = tape.grad(out);
    const auto &bv = tape.value(b), &yv = tape.value(out);
    if (tape.needs_grad(a)) {
      auto& ga = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (tape.needs_grad(b)) {
      auto& gb = tape.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * yv[i] / bv[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> x, T c) {
  return detail::unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <class T>
Var<T> add_scalar(Var<T> x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

template <class T>
Var<T> square(Var<T> x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

/// |x| with derivative sign(x) (0 at 0).
template <class T>
Var<T> abs(Var<T> x) {
  return detail::unary(x, [](T v) { return std::abs(v); }, [](T v, T) { return T((v > 0) - (v < 0)); });
}

/// x^p for x > 0 (callers clamp first when p is fractional).
template <class T>
Var<T> pow_scalar(Var<T> x, T p) {
  return detail::unary(x, [p](T v) { return std::pow(v, p); }, [p](T v, T) { return p * std::pow(v, p - T{1}); });
}

/// max(x, lo); gradient passes only where x > lo.
template <class T>
Var<T> clamp_min(Var<T> x, T lo) {
  return detail::unary(x, [lo](T v) { return v > lo ? v : lo; }, [lo](T v, T) { return T(v > lo); });
}

template <class T>
Var<T> leaky_relu(Var<T> x, T slope = T(0.2)) {
  return detail::unary(x, [slope](T v) { return v > 0 ? v : slope * v; },
                       [slope](T v, T) { return v > 0 ? T{1} : slope; });
}

/// Multiplies by a fixed tensor of the same shape (no gradient to the mask).
template <class T>
Var<T> mask_multiply(Var<T> x, std::shared_ptr<const Tensor<T>> mask) {
  auto& tape = *x.tape;
  detail::same_shape(x.dims(), mask->dims(), "mask_multiply");
  Tensor<T> y(x.dims());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * (*mask)[i];
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.needs_grad(x), [&tape, x, out, mask] {
    const auto& g = tape.grad(out);
    auto& gx = tape.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

// --- reductions ----------------------------------------------------------------

template <class T>
Var<T> sum(Var<T> x) {
  auto& tape = *x.tape;
  double s = 0.0;
  for (T v : x.value().values()) s += v;
  const Var<T> out{&tape, tape.size()};
  return tape.push(Tensor<T>({1}, static_cast<T>(s)), tape.needs_grad(x), [&tape, x, out] {
    const T g = tape.grad(out)[0];
    auto& gx = tape.grad(x);
    for (auto& v : gx.storage()) v += g;
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// [N, ...] -> [N]: mean over everything but the leading axis.
template <class T>
Var<T> mean_per_sample(Var<T> x) {
  auto& tape = *x.tape;
  const auto& xv = x.value();
  detail::require(xv.rank() >= 1, "mean_per_sample: scalar input");
  const std::size_t N = xv.dim(0), L = xv.size() / std::max<std::size_t>(N, 1);
  Tensor<T> y({N});
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < L; ++k) s += xv[n * L + k];
    y[n] = static_cast<T>(s / static_cast<double>(L));
  }
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.needs_grad(x), [&tape, x, out, N, L] {
    const auto& g = tape.grad(out);
    auto& gx = tape.grad(x);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < L; ++k) gx[n * L + k] += g[n] / static_cast<T>(L);
  });
}

// --- shape ---------------------------------------------------------------------

template <class T>
Var<T> reshape(Var<T> x, Shape dims) {
  auto& tape = *x.tape;
  auto y = x.value().reshaped(std::move(dims));
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.needs_grad(x), [&tape, x, out] {
    const auto& g = tape.grad(out);
    auto& gx = tape.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Swaps the last two axes.
template <class T>
Var<T> transpose_last2(Var<T> x) {
  auto& tape = *x.tape;
  const auto& xv = x.value();
  detail::require(xv.rank() >= 2, "transpose_last2 needs rank >= 2");
  Shape d = xv.dims();
  const std::size_t A = d[d.size() - 2], B = d[d.size() - 1], M = xv.size() / (A * B);
  std::swap(d[d.size() - 2], d[d.size() - 1]);
  Tensor<T> y(d);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b) y[m * A * B + b * A + a] = xv[m * A * B + a * B + b];
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.needs_grad(x), [&tape, x, out, A, B, M] {
    const auto& g = tape.grad(out);
    auto& gx = tape.grad(x);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t b = 0; b < B; ++b) gx[m * A * B + a * B + b] += g[m * A * B + b * A + a];
  });
}

/// Concatenates along `axis`; all other extents must agree.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  detail::require(!xs.empty(), "concat of nothing");
  auto& tape = *xs.front().tape;
  const Shape& d0 = xs.front().dims();
  detail::require(axis < d0.size(), "concat axis out of range");
  Shape d = d0;
  d[axis] = 0;
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= d0[k];
  for (std::size_t k = axis + 1; k < d0.size(); ++k) inner *= d0[k];
  std::vector<std::size_t> widths;
  bool ng = false;
  for (auto x : xs) {
    const auto& dx = x.dims();
    detail::require(dx.size() == d0.size(), "concat rank mismatch");
    for (std::size_t k = 0; k < dx.size(); ++k)
      if (k != axis) detail::require(dx[k] == d0[k], "concat: extent mismatch " + shape_str(dx) + " vs " + shape_str(d0));
    widths.push_back(dx[axis] * inner);
    d[axis] += dx[axis];
    ng = ng || tape.needs_grad(x);
  }
  const std::size_t row = d[axis] * inner;
  Tensor<T> y(d);
  std::size_t off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& xv = xs[i].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(xv.data() + o * widths[i], widths[i], y.data() + o * row + off);
    off += widths[i];
  }
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), ng, [&tape, xs, out, widths, outer, row] {
    const auto& g = tape.grad(out);
    std::size_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (tape.needs_grad(xs[i])) {
        auto& gx = tape.grad(xs[i]);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t k = 0; k < widths[i]; ++k) gx[o * widths[i] + k] += g[o * row + off + k];
      }
      off += widths[i];
    }
  });
}

/// [M, ...] -> [M*k, ...]: every leading-axis slice repeated k times in place.
template <class T>
Var<T> repeat_interleave(Var<T> x, std::size_t k) {
  auto& tape = *x.tape;
  const auto& xv = x.value();
  Shape d = xv.dims();
  const std::size_t M = d.at(0), L = xv.size() / std::max<std::size_t>(M, 1);
  d[0] = M * k;
  Tensor<T> y(d);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t r = 0; r < k; ++r) std::copy_n(xv.data() + m * L, L, y.data() + (m * k + r) * L);
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.needs_grad(x), [&tape, x, out, M, L, k] {
    const auto& g = tape.grad(out);
    auto& gx = tape.grad(x);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t l = 0; l < L; ++l) gx[m * L + l] += g[(m * k + r) * L + l];
  });
}

// --- dense / conv ----------------------------------------------------------------

/// x [N, in] * W^T + b, with W [out, in], b [out].
template <class T>
Var<T> dense(Var<T> x, Var<T> w, std::type_identity_t<std::optional<Var<T>>> b = std::nullopt) {
  auto& tape = *x.tape;
  const auto &xv = x.value(), &wv = w.value();
  detail::require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1),
                  "dense: input " + shape_str(xv.dims()) + " vs weights " + shape_str(wv.dims()));
  const std::size_t N = xv.dim(0), I = xv.dim(1), O = wv.dim(0);
  if (b) detail::require(b->dims() == Shape{O}, "dense: bias shape " + shape_str(b->dims()));
  Tensor<T> y({N, O});
  detail::MapMat<T> Y(y.data(), N, O);
  detail::CMapMat<T> X(xv.data(), N, I), W(wv.data(), O, I);
  Y.noalias() = X * W.transpose();
  if (b) {
    const auto& bv = b->value();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o) y[n * O + o] += bv[o];
  }
  const bool ng = tape.needs_grad(x) || tape.needs_grad(w) || (b && tape.needs_grad(*b));
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), ng, [&tape, x, w, b, out, N, I, O] {
    const auto& g = tape.grad(out);
    detail::CMapMat<T> G(g.data(), N, O);
    if (tape.needs_grad(x)) {
      detail::MapMat<T> GX(tape.grad(x).data(), N, I);
      GX.noalias() += G * detail::CMapMat<T>(tape.value(w).data(), O, I);
    }
    if (tape.needs_grad(w)) {
      detail::MapMat<T> GW(tape.grad(w).data(), O, I);
      GW.noalias() += G.transpose() * detail::CMapMat<T>(tape.value(x).data(), N, I);
    }
    if (b && tape.needs_grad(*b)) {
      auto& gb = tape.grad(*b);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) gb[o] += g[n * O + o];
    }
  });
}

struct Conv2dOpts {
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;

  static Conv2dOpts same(int stride = 1, int pad = 0) { return {stride, stride, pad, pad}; }
};

namespace detail {

struct ConvGeom {
  std::size_t N, C, H, W, O, KH, KW, HO, WO;
  int sh, sw, ph, pw;
  std::size_t K() const { return C * KH * KW; }
  std::size_t P() const { return HO * WO; }
};

inline std::size_t conv_extent(std::size_t in, std::size_t k, int stride, int pad, const char* axis) {
  const long span = static_cast<long>(in) + 2L * pad - static_cast<long>(k);
  require(stride >= 1 && pad >= 0 && span >= 0, std::string("conv2d: kernel larger than padded input along ") + axis);
  // A remainder is tolerated only when it falls inside the trailing zero padding.
  require(span % stride <= pad, std::string("conv2d: non-integral output extent along ") + axis + " (in " +
                                    std::to_string(in) + ", kernel " + std::to_string(k) + ", stride " +
                                    std::to_string(stride) + ", pad " + std::to_string(pad) + ")");
  return static_cast<std::size_t>(span / stride + 1);
}

// col[(c*KH + i)*KW + j][oh*WO + ow] = x[c][oh*sh - ph + i][ow*sw - pw + j]
template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t i = 0; i < g.KH; ++i)
      for (std::size_t j = 0; j < g.KW; ++j) {
        T* row = col + ((c * g.KH + i) * g.KW + j) * g.P();
        for (std::size_t oh = 0; oh < g.HO; ++oh) {
          const long ih = static_cast<long>(oh) * g.sh - g.ph + static_cast<long>(i);
          T* dst = row + oh * g.WO;
          if (ih < 0 || ih >= static_cast<long>(g.H)) {
            std::fill_n(dst, g.WO, T{0});
            continue;
          }
          const T* src = x + (c * g.H + static_cast<std::size_t>(ih)) * g.W;
          for (std::size_t ow = 0; ow < g.WO; ++ow) {
            const long iw = static_cast<long>(ow) * g.sw - g.pw + static_cast<long>(j);
            dst[ow] = (iw >= 0 && iw < static_cast<long>(g.W)) ? src[iw] : T{0};
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t i = 0; i < g.KH; ++i)
      for (std::size_t j = 0; j < g.KW; ++j) {
        const T* row = col + ((c * g.KH + i) * g.KW + j) * g.P();
        for (std::size_t oh = 0; oh < g.HO; ++oh) {
          const long ih = static_cast<long>(oh) * g.sh - g.ph + static_cast<long>(i);
          if (ih < 0 || ih >= static_cast<long>(g.H)) continue;
          T* dst = x + (c * g.H + static_cast<std::size_t>(ih)) * g.W;
          const T* src = row + oh * g.WO;
          for (std::size_t ow = 0; ow < g.WO; ++ow) {
            const long iw = static_cast<long>(ow) * g.sw - g.pw + static_cast<long>(j);
            if (iw >= 0 && iw < static_cast<long>(g.W)) dst[iw] += src[ow];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation: x [N, C, H, W], w [O, C, KH, KW], b [O] -> [N, O, HO, WO].
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, std::type_identity_t<std::optional<Var<T>>> b = std::nullopt, Conv2dOpts o = {}) {
  auto& tape = *x.tape;
  const auto &xv = x.value(), &wv = w.value();
  detail::require(xv.rank() == 4 && wv.rank() == 4 && xv.dim(1) == wv.dim(1),
                  "conv2d: input " + shape_str(xv.dims()) + " vs kernel " + shape_str(wv.dims()));
  detail::ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3), 0, 0,
                     o.stride_h, o.stride_w, o.pad_h, o.pad_w};
  g.HO = detail::conv_extent(g.H, g.KH, g.sh, g.ph, "height");
  g.WO = detail::conv_extent(g.W, g.KW, g.sw, g.pw, "width");
  if (b) detail::require(b->dims() == Shape{g.O}, "conv2d: bias shape " + shape_str(b->dims()));
  Tensor<T> y({g.N, g.O, g.HO, g.WO});
  Buffer<T> col(g.K() * g.P());
  detail::CMapMat<T> Wm(wv.data(), g.O, g.K());
  for (std::size_t n = 0; n < g.N; ++n) {
    detail::im2col(xv.data() + n * g.C * g.H * g.W, g, col.data());
    detail::MapMat<T> Y(y.data() + n * g.O * g.P(), g.O, g.P());
    Y.noalias() = Wm * detail::CMapMat<T>(col.data(), g.K(), g.P());
    if (b) {
      const auto& bv = b->value();
      for (std::size_t oc = 0; oc < g.O; ++oc) Y.row(oc).array() += bv[oc];
    }
  }
  const bool ng = tape.needs_grad(x) || tape.needs_grad(w) || (b && tape.needs_grad(*b));
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), ng, [&tape, x, w, b, out, g] {
    const auto& gy = tape.grad(out);
    const auto &xv = tape.value(x), &wv = tape.value(w);
    const bool gx_on = tape.needs_grad(x), gw_on = tape.needs_grad(w);
    Buffer<T> col(g.K() * g.P()), dcol(gx_on ? g.K() * g.P() : 0);
    detail::CMapMat<T> Wm(wv.data(), g.O, g.K());
    for (std::size_t n = 0; n < g.N; ++n) {
      detail::CMapMat<T> G(gy.data() + n * g.O * g.P(), g.O, g.P());
      if (gw_on) {
        detail::im2col(xv.data() + n * g.C * g.H * g.W, g, col.data());
        detail::MapMat<T> GW(tape.grad(w).data(), g.O, g.K());
        GW.noalias() += G * detail::CMapMat<T>(col.data(), g.K(), g.P()).transpose();
      }
      if (gx_on) {
        detail::MapMat<T> DC(dcol.data(), g.K(), g.P());
        DC.noalias() = Wm.transpose() * G;
        detail::col2im_add(dcol.data(), g, tape.grad(x).data() + n * g.C * g.H * g.W);
      }
      if (b && tape.needs_grad(*b)) {
        auto& gb = tape.grad(*b);
        for (std::size_t oc = 0; oc < g.O; ++oc) gb[oc] += G.row(oc).sum();
      }
    }
  });
}

// --- resampling ------------------------------------------------------------------

/// Nearest-neighbour upsampling by an integer factor: [N,C,H,W] -> [N,C,fH,fW].
template <class T>
Var<T> upsample_nearest(Var<T> x, std::size_t f) {
  auto& tape = *x.tape;
  const auto& xv = x.value();
  detail::require(xv.rank() == 4 && f >= 1, "upsample_nearest expects [N,C,H,W] and factor >= 1");
  const std::size_t M = xv.dim(0) * xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor<T> y({xv.dim(0), xv.dim(1), H * f, W * f});
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t i = 0; i < H * f; ++i)
      for (std::size_t j = 0; j < W * f; ++j) y[(m * H * f + i) * W * f + j] = xv[(m * H + i / f) * W + j / f];
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.needs_grad(x), [&tape, x, out, M, H, W, f] {
    const auto& g = tape.grad(out);
    auto& gx = tape.grad(x);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < H * f; ++i)
        for (std::size_t j = 0; j < W * f; ++j) gx[(m * H + i / f) * W + j / f] += g[(m * H * f + i) * W * f + j];
  });
}

/// 2x2 mean pooling with stride 2; a trailing odd row/column is dropped.
template <class T>
Var<T> avg_pool2(Var<T> x) {
  auto& tape = *x.tape;
  const auto& xv = x.value();
  detail::require(xv.rank() == 4 && xv.dim(2) >= 2 && xv.dim(3) >= 2, "avg_pool2 expects [N,C,H>=2,W>=2]");
  const std::size_t M = xv.dim(0) * xv.dim(1), H = xv.dim(2), W = xv.dim(3), HO = H / 2, WO = W / 2;
  Tensor<T> y({xv.dim(0), xv.dim(1), HO, WO});
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t i = 0; i < HO; ++i)
      for (std::size_t j = 0; j < WO; ++j) {
        const T* p = xv.data() + (m * H + 2 * i) * W + 2 * j;
        y[(m * HO + i) * WO + j] = T(0.25) * (p[0] + p[1] + p[W] + p[W + 1]);
      }
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), tape.needs_grad(x), [&tape, x, out, M, H, W, HO, WO] {
    const auto& g = tape.grad(out);
    auto& gx = tape.grad(x);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < HO; ++i)
        for (std::size_t j = 0; j < WO; ++j) {
          const T v = T(0.25) * g[(m * HO + i) * WO + j];
          T* p = gx.data() + (m * H + 2 * i) * W + 2 * j;
          p[0] += v, p[1] += v, p[W] += v, p[W + 1] += v;
        }
  });
}

// --- normalization / regularization -----------------------------------------------

struct BatchNormOpts {
  bool training = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of x [N, C, ...] over N and trailing axes. Training mode
/// uses batch statistics and updates the running ones (unbiased variance).
template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean, Parameter<T>& running_var,
                  BatchNormOpts o) {
  auto& tape = *x.tape;
  const auto& xv = x.value();
  detail::require(xv.rank() >= 2, "batch_norm expects [N, C, ...]");
  const std::size_t N = xv.dim(0), C = xv.dim(1), L = xv.size() / (N * C);
  detail::require(gamma.dims() == Shape{C} && beta.dims() == Shape{C}, "batch_norm: affine shape mismatch");
  detail::require(running_mean.value.size() == C && running_var.value.size() == C, "batch_norm: running stat shape");
  if (o.training && N < 2) throw ShapeError("batch_norm in training mode needs N >= 2, got " + std::to_string(N));
  const double M = static_cast<double>(N * L);
  auto xhat = std::make_shared<Tensor<T>>(xv.dims());
  auto inv_std = std::make_shared<std::vector<T>>(C);
  Tensor<T> y(xv.dims());
  const auto &gv = gamma.value(), &bv = beta.value();
  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (o.training) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t l = 0; l < L; ++l) s += xv[(n * C + c) * L + l];
      mu = s / M;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t l = 0; l < L; ++l) {
          const double d = xv[(n * C + c) * L + l] - mu;
          s2 += d * d;
        }
      var = s2 / M;
      auto& rm = running_mean.value[c];
      auto& rv = running_var.value[c];
      rm = static_cast<T>((1 - o.momentum) * rm + o.momentum * mu);
      rv = static_cast<T>((1 - o.momentum) * rv + o.momentum * (M > 1 ? s2 / (M - 1) : var));
    } else {
      mu = running_mean.value[c];
      var = running_var.value[c];
    }
    const double is = 1.0 / std::sqrt(var + o.eps);
    (*inv_std)[c] = static_cast<T>(is);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t k = (n * C + c) * L + l;
        const T h = static_cast<T>((xv[k] - mu) * is);
        (*xhat)[k] = h;
        y[k] = gv[c] * h + bv[c];
      }
  }
  const bool training = o.training;
  const bool ng = tape.any_needs_grad({x, gamma, beta});
  const Var<T> out{&tape, tape.size()};
  return tape.push(std::move(y), ng, [&tape, x, gamma, beta, out, xhat, inv_std, N, C, L, M, training] {
    const auto& g = tape.grad(out);
    const auto& gv = tape.value(gamma);
    for (std::size_t c = 0; c < C; ++c) {
      double sg = 0.0, sgh = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t k = (n * C + c) * L + l;
          sg += g[k];
          sgh += g[k] * (*xhat)[k];
        }
      if (tape.needs_grad(gamma)) tape.grad(gamma)[c] += static_cast<T>(sgh);
      if (tape.needs_grad(beta)) tape.grad(beta)[c] += static_cast<T>(sg);
      if (!tape.needs_grad(x)) continue;
      auto& gx = tape.grad(x);
      const double scale = gv[c] * (*inv_std)[c];
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t k = (n * C + c) * L + l;
          if (training) gx[k] += static_cast<T>(scale * (g[k] - sg / M - (*xhat)[k] * sgh / M));
          else gx[k] += static_cast<T>(scale * g[k]);
        }
    }
  });
}

enum class DropoutGranularity { Element, FeatureMap };

/// Inverted dropout. Feature-map granularity drops whole [H, W] planes of x [N, C, ...].
template <class T>
Var<T> dropout(Var<T> x, double rate, DropoutGranularity gran, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DataError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const auto& xv = x.value();
  auto mask = std::make_shared<Tensor<T>>(xv.dims());
  std::bernoulli_distribution keep(1.0 - rate);
  const T s = static_cast<T>(1.0 / (1.0 - rate));
  if (gran == DropoutGranularity::Element) {
    for (auto& m : mask->storage()) m = keep(rng) ? s : T{0};
  } else {
    detail::require(xv.rank() >= 2, "feature-map dropout expects [N, C, ...]");
    const std::size_t NC = xv.dim(0) * xv.dim(1), L = xv.size() / NC;
    for (std::size_t m = 0; m < NC; ++m) std::fill_n(mask->data() + m * L, L, keep(rng) ? s : T{0});
  }
  return mask_multiply<T>(x, mask);
}

/// Zeroes whole channels: x [N, C, ...], keep [N, C] with entries 0 or 1 (no rescaling).
template <class T>
Var<T> channel_mask(Var<T> x, const Tensor<T>& keep) {
  const auto& xv = x.value();
  detail::require(xv.rank() >= 2 && keep.dims() == Shape{xv.dim(0), xv.dim(1)},
                  "channel_mask: mask " + shape_str(keep.dims()) + " vs input " + shape_str(xv.dims()));
  const std::size_t NC = xv.dim(0) * xv.dim(1), L = xv.size() / NC;
  auto mask = std::make_shared<Tensor<T>>(xv.dims());
  for (std::size_t m = 0; m < NC; ++m) std::fill_n(mask->data() + m * L, L, keep[m]);
  return mask_multiply<T>(x, mask);
}

}  // namespace seisinv::ad
