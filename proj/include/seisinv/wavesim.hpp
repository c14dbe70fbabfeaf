#pragma once

// Pseudospectral acoustic simulation: p_tt = v^2 (p_xx + p_zz) + source.
//
// Spatial derivatives are computed with FFTs on a grid that surrounds the model
// with an absorbing sponge of `sponge_width` cells on every side, plus a few
// undamped rows above the surface (velocity edge-replicated outward). Time
// stepping is second-order leapfrog.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/core/tensor.hpp"
#include "seisinv/geomodel.hpp"

namespace seisinv::sim {

// Pseudospectral + leapfrog stability limit on v*dt/dx: 2 / (pi * sqrt(2)).
inline constexpr double kCourantLimit = 2.0 / (std::numbers::pi * std::numbers::sqrt2);

struct SimGrid {
  int nz = 100;
  int nx = 100;
  double dx = 10.0;
  int sponge_width = 20;
};

struct AcquisitionGeometry {
  std::vector<int> source_columns;
  std::vector<int> receiver_columns;
  int source_row = 0;
  int receiver_row = 0;
  double record_dt = 1e-3;
  int record_steps = 1000;

  /// `n_sources` evenly spaced sources (column i*nx/n) and a receiver on every column.
  static AcquisitionGeometry uniform(int nx, int n_sources, int record_steps = 1000) {
    AcquisitionGeometry g;
    for (int i = 0; i < n_sources; ++i) g.source_columns.push_back(i * nx / n_sources);
    for (int c = 0; c < nx; ++c) g.receiver_columns.push_back(c);
    g.record_steps = record_steps;
    return g;
  }
};

struct SimParams {
  double dt_int = 0.25e-3;       // internal step, s
  double dominant_freq = 15.0;   // Ricker peak frequency, Hz
  bool line_source_correction = true;
  double sponge_reflection = 1e-3;  // target normal-incidence reflection of the sponge
  int top_margin = 10;              // undamped rows above the surface
};

struct Wavelet {
  std::vector<double> samples;
  double dt = 0.0;
  std::size_t peak_index = 0;

  double peak_time() const { return static_cast<double>(peak_index) * dt; }
};

/// Ricker wavelet (negative second derivative of a Gaussian), peak 1 at index
/// `peak_index`, truncated at +-1.5 / f where its tail is below 1e-9.
inline Wavelet ricker_wavelet(double dominant_freq, double dt) {
  if (!(dominant_freq > 0) || !(dt > 0)) throw DataError("ricker_wavelet needs positive frequency and dt");
  const auto half = static_cast<std::size_t>(std::ceil(1.5 / (dominant_freq * dt)));
  Wavelet w;
  w.dt = dt;
  w.peak_index = half;
  w.samples.resize(2 * half + 1);
  const double a = std::numbers::pi * dominant_freq;
  for (std::size_t i = 0; i <= 2 * half; ++i) {
    const double t = (static_cast<double>(i) - static_cast<double>(half)) * dt;
    const double x = a * a * t * t;
    w.samples[i] = (1.0 - 2.0 * x) * std::exp(-x);
  }
  return w;
}

namespace detail {

// The FFTW planner is not thread-safe; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
struct PlanDestroy {
  void operator()(fftw_plan p) const {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(p);
  }
};
using PlanPtr = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDestroy>;

template <class T>
std::unique_ptr<T[], FftwFree> fftw_buffer(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
  if (!p) throw std::bad_alloc();
  return std::unique_ptr<T[], FftwFree>(p);
}

inline double wavenumber(int i, int n, double dx) {
  const int k = (i <= n / 2) ? i : i - n;
  return 2.0 * std::numbers::pi * k / (n * dx);
}

}  // namespace detail

/// Periodic spectral Laplacian on an nz x nx grid, plans and buffers reused across calls.
class SpectralLaplacian {
 public:
  SpectralLaplacian(int nz, int nx, double dx)
      : nz_(nz), nx_(nx), nxc_(nx / 2 + 1),
        real_(detail::fftw_buffer<double>(static_cast<std::size_t>(nz) * nx)),
        spec_(detail::fftw_buffer<fftw_complex>(static_cast<std::size_t>(nz) * nxc_)),
        mult_(static_cast<std::size_t>(nz) * nxc_) {
    if (nz < 2 || nx < 2 || !(dx > 0)) throw DataError("SpectralLaplacian needs nz, nx >= 2 and dx > 0");
    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      fwd_.reset(fftw_plan_dft_r2c_2d(nz, nx, real_.get(), spec_.get(), FFTW_ESTIMATE));
      inv_.reset(fftw_plan_dft_c2r_2d(nz, nx, spec_.get(), real_.get(), FFTW_ESTIMATE));
    }
    const double norm = 1.0 / (static_cast<double>(nz) * nx);
    for (int i = 0; i < nz; ++i) {
      const double kz = detail::wavenumber(i, nz, dx);
      for (int j = 0; j < nxc_; ++j) {
        const double kx = detail::wavenumber(j, nx, dx);
        mult_[static_cast<std::size_t>(i) * nxc_ + j] = -(kz * kz + kx * kx) * norm;
      }
    }
  }

  int nz() const { return nz_; }
  int nx() const { return nx_; }

  /// out = d2/dz2 in + d2/dx2 in. `in` and `out` may alias.
  void apply(const double* in, double* out) {
    const std::size_t n = static_cast<std::size_t>(nz_) * nx_;
    std::copy(in, in + n, real_.get());
    fftw_execute(fwd_.get());
    const std::size_t nc = static_cast<std::size_t>(nz_) * nxc_;
    for (std::size_t k = 0; k < nc; ++k) {
      spec_[k][0] *= mult_[k];
      spec_[k][1] *= mult_[k];
    }
    fftw_execute(inv_.get());
    std::copy(real_.get(), real_.get() + n, out);
  }

 private:
  int nz_, nx_, nxc_;
  std::unique_ptr<double[], detail::FftwFree> real_;
  std::unique_ptr<fftw_complex[], detail::FftwFree> spec_;
  std::vector<double> mult_;
  detail::PlanPtr fwd_, inv_;
};

inline Tensor<double> spectral_laplacian(const Tensor<double>& field, double dx) {
  if (field.rank() != 2) throw ShapeError("spectral_laplacian expects a 2-D field");
  SpectralLaplacian lap(static_cast<int>(field.dim(0)), static_cast<int>(field.dim(1)), dx);
  Tensor<double> out(field.dims());
  lap.apply(field.data(), out.data());
  return out;
}

/// Causal half-order time derivative via FFT (multiplier (i w)^{1/2}). Converts a
/// 2-D line-source response into the zero-phase pulse shape of a point source.
inline std::vector<double> half_derivative(const std::vector<double>& x, double dt) {
  std::size_t len = 1;
  while (len < 2 * x.size()) len <<= 1;
  auto real = detail::fftw_buffer<double>(len);
  auto spec = detail::fftw_buffer<fftw_complex>(len / 2 + 1);
  detail::PlanPtr fwd, inv;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd.reset(fftw_plan_dft_r2c_1d(static_cast<int>(len), real.get(), spec.get(), FFTW_ESTIMATE));
    inv.reset(fftw_plan_dft_c2r_1d(static_cast<int>(len), spec.get(), real.get(), FFTW_ESTIMATE));
  }
  std::fill(real.get(), real.get() + len, 0.0);
  std::copy(x.begin(), x.end(), real.get());
  fftw_execute(fwd.get());
  const std::complex<double> phase = std::polar(1.0, std::numbers::pi / 4);
  for (std::size_t k = 0; k <= len / 2; ++k) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / (static_cast<double>(len) * dt);
    std::complex<double> z(spec[k][0], spec[k][1]);
    z *= (k == 0 || k == len / 2) ? 0.0 : std::sqrt(w) * phase / static_cast<double>(len);
    spec[k][0] = z.real();
    spec[k][1] = z.imag();
  }
  fftw_execute(inv.get());
  return std::vector<double>(real.get(), real.get() + x.size());
}

struct WavefieldState {
  Tensor<double> p_prev;
  Tensor<double> p_curr;
  std::size_t step_index = 0;
};

struct SourceTerm {
  int row = 0;  // model coordinates
  int col = 0;
  double amplitude = 0.0;
};

/// Leapfrog propagator over one velocity model. State grids include the absorbing
/// frame: `sponge_width` damped cells on every side plus `top_margin` undamped cells
/// between the surface row and the top sponge (keeps grazing surface waves clear of
/// the damping ramp).
class Propagator {
 public:
  Propagator(const Tensor<float>& velocity, double dx, double dt, int sponge_width, int top_margin = 10,
             double sponge_reflection = 1e-3)
      : nz_(static_cast<int>(velocity.dim(0))), nx_(static_cast<int>(velocity.dim(1))), pad_(sponge_width),
        top_(sponge_width + top_margin), dt_(dt),
        lap_(nz_ + top_ + sponge_width, nx_ + 2 * sponge_width, dx) {
    if (velocity.rank() != 2) throw ShapeError("velocity must be a 2-D grid");
    if (sponge_width < 0 || top_margin < 0) throw DataError("sponge_width and top_margin must be >= 0");
    if (!(dt > 0)) throw DataError("time step must be positive");
    const int NZ = padded_nz(), NX = padded_nx();
    vdt2_.assign(static_cast<std::size_t>(NZ) * NX, 0.0);
    damp_.assign(static_cast<std::size_t>(NZ) * NX, 1.0);
    double vmax = 0.0;
    for (int i = 0; i < NZ; ++i) {
      const int mi = std::clamp(i - top_, 0, nz_ - 1);
      for (int j = 0; j < NX; ++j) {
        const int mj = std::clamp(j - pad_, 0, nx_ - 1);
        const double v = velocity(mi, mj);
        if (!(v > 0) || !std::isfinite(v)) throw DataError("velocity must be positive and finite");
        vmax = std::max(vmax, v);
        vdt2_[idx(i, j)] = v * v * dt * dt;
      }
    }
    courant_ = vmax * dt / dx;
    if (courant_ > kCourantLimit)
      throw NumericalError("CFL violation: v_max*dt/dx = " + std::to_string(courant_) + " exceeds " +
                           std::to_string(kCourantLimit));
    if (pad_ > 0) {
      // Quadratic damping ramp; peak rate chosen for the requested sponge reflection.
      const double eta_max = 1.5 * vmax * std::log(1.0 / sponge_reflection) / (pad_ * dx);
      for (int i = 0; i < NZ; ++i) {
        for (int j = 0; j < NX; ++j) {
          const int dz = std::max({0, pad_ - i, i - (top_ + nz_ - 1)});
          const int dxc = std::max({0, pad_ - j, j - (pad_ + nx_ - 1)});
          const double r = std::min(1.0, std::sqrt(static_cast<double>(dz * dz + dxc * dxc)) / pad_);
          damp_[idx(i, j)] = std::exp(-eta_max * r * r * dt);
        }
      }
    }
    lap_buf_.resize(static_cast<std::size_t>(NZ) * NX);
  }

  int padded_nz() const { return nz_ + top_ + pad_; }
  int padded_nx() const { return nx_ + 2 * pad_; }
  int sponge_width() const { return pad_; }
  double courant() const { return courant_; }
  double dt() const { return dt_; }

  WavefieldState initial_state() const {
    const Shape dims{static_cast<std::size_t>(padded_nz()), static_cast<std::size_t>(padded_nx())};
    return WavefieldState{Tensor<double>(dims), Tensor<double>(dims), 0};
  }

  /// Advances one step: p_next = 2 p - p_prev + dt^2 v^2 (lap p + source), then sponge.
  void step(WavefieldState& s, const SourceTerm& src) {
    const int NZ = padded_nz(), NX = padded_nx();
    if (s.p_curr.dims() != Shape{static_cast<std::size_t>(NZ), static_cast<std::size_t>(NX)})
      throw ShapeError("wavefield state does not match propagator grid");
    lap_.apply(s.p_curr.data(), lap_buf_.data());
    double* prev = s.p_prev.data();
    double* curr = s.p_curr.data();
    const std::size_t n = lap_buf_.size();
    // p_prev becomes p_next in place.
    for (std::size_t k = 0; k < n; ++k) prev[k] = 2.0 * curr[k] - prev[k] + vdt2_[k] * lap_buf_[k];
    if (src.amplitude != 0.0) {
      const auto k = cell(src.row, src.col);
      prev[k] += vdt2_[k] * src.amplitude;
    }
    if (pad_ > 0) {
      for (std::size_t k = 0; k < n; ++k) {
        prev[k] *= damp_[k];
        curr[k] *= damp_[k];
      }
    }
    std::swap(s.p_prev, s.p_curr);
    ++s.step_index;
  }

  double sample(const WavefieldState& s, int row, int col) const { return s.p_curr[cell(row, col)]; }

  /// Model-sized window of the current pressure field.
  Tensor<double> interior(const WavefieldState& s) const {
    Tensor<double> out({static_cast<std::size_t>(nz_), static_cast<std::size_t>(nx_)});
    for (int i = 0; i < nz_; ++i)
      for (int j = 0; j < nx_; ++j) out(i, j) = s.p_curr[cell(i, j)];
    return out;
  }

  /// Discrete energy conserved by undamped leapfrog:
  /// sum (p_curr - p_prev)^2 / (v dt)^2 - p_curr * lap(p_prev). The sponge can only lower it.
  double energy(const WavefieldState& s) {
    lap_.apply(s.p_prev.data(), lap_buf_.data());
    const double* prev = s.p_prev.data();
    const double* curr = s.p_curr.data();
    double e = 0.0;
    for (std::size_t k = 0; k < lap_buf_.size(); ++k) {
      const double d = curr[k] - prev[k];
      e += d * d / vdt2_[k] - curr[k] * lap_buf_[k];
    }
    return e;
  }

  static void check_finite(const WavefieldState& s) {
    for (double v : s.p_curr.values())
      if (!std::isfinite(v))
        throw NumericalError("non-finite wavefield at step " + std::to_string(s.step_index));
  }

 private:
  std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) * padded_nx() + j; }
  std::size_t cell(int row, int col) const { return idx(row + top_, col + pad_); }

  int nz_, nx_, pad_, top_;
  double dt_;
  double courant_ = 0.0;
  SpectralLaplacian lap_;
  std::vector<double> vdt2_;
  std::vector<double> damp_;
  std::vector<double> lap_buf_;
};

/// One-off step on a fresh propagator; prefer Propagator::step in loops.
inline WavefieldState time_step(WavefieldState state, const geo::VelocityModel& model, double dt_int,
                                const SourceTerm& src, int sponge_width = 20) {
  Propagator prop(model.values, model.spacing, dt_int, sponge_width);
  prop.step(state, src);
  Propagator::check_finite(state);
  return state;
}

namespace detail {

inline int decimation(double record_dt, double dt_int) {
  const double ratio = record_dt / dt_int;
  const auto k = static_cast<int>(std::lround(ratio));
  if (k < 1 || std::abs(ratio - k) > 1e-9 * ratio)
    throw DataError("record_dt must be an integer multiple of the internal step");
  return k;
}

inline void check_geometry(const geo::VelocityModel& model, const AcquisitionGeometry& geom) {
  auto in_cols = [&](int c) { return c >= 0 && c < model.cols(); };
  auto in_rows = [&](int r) { return r >= 0 && r < model.rows(); };
  if (geom.source_columns.empty() || geom.receiver_columns.empty())
    throw DataError("geometry needs at least one source and one receiver");
  for (int c : geom.source_columns)
    if (!in_cols(c)) throw DataError("source column " + std::to_string(c) + " outside model");
  for (int c : geom.receiver_columns)
    if (!in_cols(c)) throw DataError("receiver column " + std::to_string(c) + " outside model");
  if (!in_rows(geom.source_row) || !in_rows(geom.receiver_row)) throw DataError("source/receiver row outside model");
  if (!(geom.record_dt > 0) || geom.record_steps < 1) throw DataError("record_dt and record_steps must be positive");
}

}  // namespace detail

/// Source time function sampled at every internal step.
inline std::vector<double> source_time_function(const Wavelet& w, std::size_t n_steps, bool line_source_correction) {
  std::vector<double> s(n_steps, 0.0);
  std::copy_n(w.samples.begin(), std::min(n_steps, w.samples.size()), s.begin());
  if (!line_source_correction) return s;
  auto h = half_derivative(s, w.dt);
  const double peak = *std::max_element(h.begin(), h.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  for (auto& v : h) v /= std::abs(peak);
  return h;
}

/// Runs one shot on a prepared propagator, returning [record_steps, n_receivers].
inline Tensor<float> run_shot(Propagator& prop, const AcquisitionGeometry& geom, int source_index,
                              const std::vector<double>& stf, int decim) {
  const auto n_rec = geom.receiver_columns.size();
  Tensor<float> gather({static_cast<std::size_t>(geom.record_steps), n_rec});
  auto state = prop.initial_state();
  const int src_col = geom.source_columns.at(source_index);
  const std::size_t total = static_cast<std::size_t>(geom.record_steps - 1) * decim;
  for (std::size_t n = 0;; ++n) {
    if (n % decim == 0) {
      const std::size_t j = n / decim;
      for (std::size_t r = 0; r < n_rec; ++r)
        gather(j, r) = static_cast<float>(prop.sample(state, geom.receiver_row, geom.receiver_columns[r]));
      if (j % 50 == 0 || n == total) Propagator::check_finite(state);
    }
    if (n == total) break;
    prop.step(state, SourceTerm{geom.source_row, src_col, n < stf.size() ? stf[n] : 0.0});
  }
  return gather;
}

inline Tensor<float> simulate_shot(const geo::VelocityModel& model, const AcquisitionGeometry& geom,
                                   int source_index, const Wavelet& wavelet, const SimParams& params = {},
                                   int sponge_width = 20) {
  detail::check_geometry(model, geom);
  if (source_index < 0 || source_index >= static_cast<int>(geom.source_columns.size()))
    throw DataError("source index out of range");
  if (std::abs(wavelet.dt - params.dt_int) > 1e-12) throw DataError("wavelet must be sampled at the internal step");
  const int decim = detail::decimation(geom.record_dt, params.dt_int);
  Propagator prop(model.values, model.spacing, params.dt_int, sponge_width, params.top_margin,
                  params.sponge_reflection);
  const auto stf = source_time_function(wavelet, static_cast<std::size_t>(geom.record_steps) * decim,
                                        params.line_source_correction);
  return run_shot(prop, geom, source_index, stf, decim);
}

/// All shots stacked: [S, record_steps, n_receivers].
inline Tensor<float> simulate_cube(const geo::VelocityModel& model, const AcquisitionGeometry& geom,
                                   const Wavelet& wavelet, const SimParams& params = {}, int sponge_width = 20) {
  detail::check_geometry(model, geom);
  if (std::abs(wavelet.dt - params.dt_int) > 1e-12) throw DataError("wavelet must be sampled at the internal step");
  const int decim = detail::decimation(geom.record_dt, params.dt_int);
  Propagator prop(model.values, model.spacing, params.dt_int, sponge_width, params.top_margin,
                  params.sponge_reflection);
  const auto stf = source_time_function(wavelet, static_cast<std::size_t>(geom.record_steps) * decim,
                                        params.line_source_correction);
  const std::size_t S = geom.source_columns.size(), T = geom.record_steps, R = geom.receiver_columns.size();
  Tensor<float> cube({S, T, R});
  for (std::size_t s = 0; s < S; ++s) {
    const auto g = run_shot(prop, geom, static_cast<int>(s), stf, decim);
    std::copy(g.data(), g.data() + g.size(), cube.data() + s * T * R);
  }
  return cube;
}

}  // namespace seisinv::sim
