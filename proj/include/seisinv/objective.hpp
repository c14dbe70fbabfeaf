#pragma once

// Structural similarity and the training loss, differentiable through diffcore.
// Images are [N, 1, H, W]; statistics use a normalized Gaussian window and only
// window positions that fit entirely inside the image.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/diffcore/ops.hpp"
#include "seisinv/diffcore/tape.hpp"

namespace seisinv::obj {

enum class LossKind { L1, L2, L2Mssim };

NLOHMANN_JSON_SERIALIZE_ENUM(LossKind, {{LossKind::L1, "l1"}, {LossKind::L2, "l2"}, {LossKind::L2Mssim, "l2_mssim"}})

/// Canonical five-scale weights, rescaled so they sum to 1 (as published they sum to 1.0001).
inline std::vector<double> canonical_mssim_weights() {
  std::vector<double> w{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= s;
  return w;
}

struct LossConfig {
  std::size_t window = 11;
  double sigma = 1.5;
  std::vector<double> weights = canonical_mssim_weights();
  double k1 = 0.01, k2 = 0.03, dynamic_range = 1.0;
  LossKind kind = LossKind::L2Mssim;
  bool raw_sum = false;  // sums over pixels/positions instead of means

  double c1() const { return std::pow(k1 * dynamic_range, 2); }
  double c2() const { return std::pow(k2 * dynamic_range, 2); }

  void validate() const {
    if (window % 2 == 0 || window == 0) throw DataError("SSIM window must be odd");
    if (!(sigma > 0) || !(k1 > 0) || !(k2 > 0)) throw DataError("SSIM sigma and stabilizers must be positive");
    if (weights.empty()) throw DataError("MSSIM needs at least one scale");
    double s = 0;
    for (double w : weights) {
      if (!(w > 0)) throw DataError("MSSIM weights must be positive");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw DataError("MSSIM weights must sum to 1");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossConfig, window, sigma, weights, k1, k2, dynamic_range, kind,
                                   raw_sum)

/// size x size Gaussian, unit sum.
inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1) / 2;
  for (std::size_t i = 0; i < size; ++i) g[i] = std::exp(-std::pow(static_cast<double>(i) - c, 2) / (2 * sigma * sigma));
  const double s = std::accumulate(g.begin(), g.end(), 0.0);
  std::vector<double> w(size * size);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) w[i * size + j] = g[i] * g[j] / (s * s);
  return w;
}

/// Largest odd window not exceeding the configured size or the image extent.
inline std::size_t fitted_window(std::size_t configured, std::size_t extent) {
  std::size_t w = std::min(configured, extent);
  if (w % 2 == 0) --w;
  return std::max<std::size_t>(w, 1);
}

template <class T>
struct SsimResult {
  ad::Var<T> ssim;  // [N], mean of the SSIM map per sample
  ad::Var<T> cs;    // [N], mean contrast-structure term per sample
  ad::Var<T> map;   // [N, 1, H', W']
};

/// Single-scale SSIM with an explicit window (must fit inside the image).
template <class T>
SsimResult<T> ssim_terms(ad::Var<T> x, ad::Var<T> y, std::size_t window, const LossConfig& cfg) {
  auto& tape = *x.tape;
  ad::detail::same_shape(x.dims(), y.dims(), "ssim");
  const auto& d = x.dims();
  if (d.size() != 4 || d[1] != 1) throw ShapeError("ssim expects [N, 1, H, W], got " + shape_str(d));
  if (d[2] < window || d[3] < window)
    throw ShapeError("ssim: image " + std::to_string(d[2]) + "x" + std::to_string(d[3]) + " smaller than window " +
                     std::to_string(window));
  const auto g = gaussian_window(window, cfg.sigma);
  auto k = tape.constant(Tensor<T>({1, 1, window, window}, std::vector<T>(g.begin(), g.end())));
  auto filt = [&](ad::Var<T> v) { return ad::conv2d(v, k); };
  const T c1 = static_cast<T>(cfg.c1()), c2 = static_cast<T>(cfg.c2());
  auto mx = filt(x), my = filt(y);
  auto mxx = ad::mul(mx, mx), myy = ad::mul(my, my), mxy = ad::mul(mx, my);
  auto sxx = ad::sub(filt(ad::mul(x, x)), mxx);
  auto syy = ad::sub(filt(ad::mul(y, y)), myy);
  auto sxy = ad::sub(filt(ad::mul(x, y)), mxy);
  auto cs_map = ad::div(ad::add_scalar(ad::scale(sxy, T(2)), c2), ad::add_scalar(ad::add(sxx, syy), c2));
  auto lum = ad::div(ad::add_scalar(ad::scale(mxy, T(2)), c1), ad::add_scalar(ad::add(mxx, myy), c1));
  auto map = ad::mul(lum, cs_map);
  return {ad::mean_per_sample(map), ad::mean_per_sample(cs_map), map};
}

/// SSIM with the configured window; errors when the image is smaller than it.
template <class T>
SsimResult<T> ssim(ad::Var<T> x, ad::Var<T> y, const LossConfig& cfg = {}) {
  return ssim_terms(x, y, cfg.window, cfg);
}

/// Multi-scale SSIM per sample ([N]), product form:
///   prod_{j<M} cs_j^{w_j} * ssim_M^{w_M}
/// with 2x2 mean pooling between scales. At coarse scales the window shrinks to the
/// largest odd size that fits. Per-scale terms are floored at a small positive value
/// before the fractional power.
template <class T>
ad::Var<T> mssim_per_sample(ad::Var<T> x, ad::Var<T> y, const LossConfig& cfg = {}) {
  cfg.validate();
  const auto& d = x.dims();
  const std::size_t M = cfg.weights.size();
  const std::size_t need = std::size_t{1} << (M - 1);
  if (d.size() != 4 || d[2] < need || d[3] < need)
    throw ShapeError("mssim: " + shape_str(d) + " too small for " + std::to_string(M) + " scales (need >= " +
                     std::to_string(need) + " per side)");
  const T floor = T(1e-6);
  std::optional<ad::Var<T>> prod;
  for (std::size_t j = 0; j < M; ++j) {
    const auto& dj = x.dims();
    const std::size_t win = fitted_window(cfg.window, std::min(dj[2], dj[3]));
    auto t = ssim_terms(x, y, win, cfg);
    auto term = (j + 1 < M) ? t.cs : t.ssim;
    term = ad::pow_scalar(ad::clamp_min(term, floor), static_cast<T>(cfg.weights[j]));
    prod = prod ? ad::mul(*prod, term) : term;
    if (j + 1 < M) {
      x = ad::avg_pool2(x);
      y = ad::avg_pool2(y);
    }
  }
  return *prod;
}

template <class T>
ad::Var<T> mssim(ad::Var<T> x, ad::Var<T> y, const LossConfig& cfg = {}) {
  return ad::mean(mssim_per_sample(x, y, cfg));
}

/// Loss on normalized velocities (lower is better):
///   L1: mean |x - y|;  L2: mean (x - y)^2;  L2Mssim: mean (x - y)^2 - mssim(x, y).
/// raw_sum replaces means by sums (the MSSIM term is scaled by the finest-scale
/// window-position count).
template <class T>
ad::Var<T> training_loss(ad::Var<T> pred, ad::Var<T> truth, const LossConfig& cfg = {}) {
  ad::detail::same_shape(pred.dims(), truth.dims(), "training_loss");
  auto diff = ad::sub(pred, truth);
  auto reduce = [&](ad::Var<T> v) { return cfg.raw_sum ? ad::sum(v) : ad::mean(v); };
  switch (cfg.kind) {
    case LossKind::L1: return reduce(ad::abs(diff));
    case LossKind::L2: return reduce(ad::square(diff));
    case LossKind::L2Mssim: {
      auto ms = mssim(pred, truth, cfg);
      if (cfg.raw_sum) {
        const auto& d = pred.dims();
        const std::size_t win = fitted_window(cfg.window, std::min(d[2], d[3]));
        ms = ad::scale(ms, static_cast<T>((d[2] - win + 1) * (d[3] - win + 1) * d[0]));
      }
      return ad::sub(reduce(ad::square(diff)), ms);
    }
  }
  throw DataError("unknown loss kind");
}

// --- evaluation helpers (no gradient) ---------------------------------------------

/// 2-D [H, W] images.
inline double ssim_value(const Tensor<double>& a, const Tensor<double>& b, const LossConfig& cfg = {}) {
  ad::Tape<double> t;
  const Shape d{1, 1, a.dim(0), a.dim(1)};
  return ad::mean(ssim(t.constant(a.reshaped(d)), t.constant(b.reshaped(d)), cfg).ssim).value()[0];
}

inline double mssim_value(const Tensor<double>& a, const Tensor<double>& b, const LossConfig& cfg = {}) {
  ad::Tape<double> t;
  const Shape d{1, 1, a.dim(0), a.dim(1)};
  return mssim(t.constant(a.reshaped(d)), t.constant(b.reshaped(d)), cfg).value()[0];
}

}  // namespace seisinv::obj
