#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "seisinv/wavesim.hpp"

using namespace seisinv;
using namespace seisinv::sim;

namespace {

geo::VelocityModel constant_model(float v, int n = 100) {
  geo::VelocityModel m;
  m.values = Tensor<float>({static_cast<std::size_t>(n), static_cast<std::size_t>(n)}, v);
  return m;
}

// Peak time of a recorded trace (s), parabolic refinement around the argmax in [lo, hi).
double pick_peak(const Tensor<float>& gather, int rec, int lo, int hi, double dt) {
  int best = lo;
  for (int t = lo; t < hi; ++t)
    if (gather(t, rec) > gather(best, rec)) best = t;
  const double a = gather(best - 1, rec), b = gather(best, rec), c = gather(best + 1, rec);
  return (best + 0.5 * (a - c) / (a - 2 * b + c)) * dt;
}

// 4th-order centred differences on a periodic grid.
Tensor<double> fd4_laplacian(const Tensor<double>& f, double dx) {
  const int nz = static_cast<int>(f.dim(0)), nx = static_cast<int>(f.dim(1));
  Tensor<double> out(f.dims());
  auto at = [&](int i, int j) { return f(((i % nz) + nz) % nz, ((j % nx) + nx) % nx); };
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < nx; ++j) {
      const double dzz = (-at(i - 2, j) + 16 * at(i - 1, j) - 30 * at(i, j) + 16 * at(i + 1, j) - at(i + 2, j));
      const double dxx = (-at(i, j - 2) + 16 * at(i, j - 1) - 30 * at(i, j) + 16 * at(i, j + 1) - at(i, j + 2));
      out(i, j) = (dzz + dxx) / (12 * dx * dx);
    }
  return out;
}

}  // namespace

TEST(Ricker, PeakSymmetryZeroMean) {
  const auto w = ricker_wavelet(15, 0.25e-3);
  EXPECT_EQ(w.samples[w.peak_index], 1.0);
  double max_abs = 0, area = 0;
  for (double s : w.samples) {
    max_abs = std::max(max_abs, std::abs(s));
    area += s * w.dt;
  }
  EXPECT_EQ(max_abs, 1.0);
  const double support = (w.samples.size() - 1) * w.dt;
  EXPECT_LT(std::abs(area), 1e-6 * support);
  for (std::size_t k = 1; k <= w.peak_index; ++k)
    EXPECT_NEAR(w.samples[w.peak_index - k], w.samples[w.peak_index + k], 1e-12);
  EXPECT_NEAR(w.peak_time(), 0.1, w.dt);
}

TEST(Ricker, MatchesClosedForm) {
  const auto w = ricker_wavelet(20, 1e-3);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const double t = (static_cast<double>(i) - w.peak_index) * w.dt;
    const double a = std::pow(std::numbers::pi * 20 * t, 2);
    EXPECT_NEAR(w.samples[i], (1 - 2 * a) * std::exp(-a), 1e-14);
  }
  EXPECT_THROW(ricker_wavelet(0, 1e-3), DataError);
}

TEST(SpectralLaplacian, ConstantFieldIsZero) {
  Tensor<double> f({64, 48}, 3.7);
  const auto out = spectral_laplacian(f, 10.0);
  for (double v : out.values()) EXPECT_LT(std::abs(v), 1e-10 * 3.7);
}

TEST(SpectralLaplacian, FourierEigenfunction) {
  const int nz = 64, nx = 80;
  const double dx = 10.0;
  for (auto [kz, kx] : {std::pair{0, 3}, std::pair{5, 0}, std::pair{7, 11}, std::pair{31, 2}}) {
    Tensor<double> f({nz, nx});
    const double az = 2 * std::numbers::pi * kz / (nz * dx), ax = 2 * std::numbers::pi * kx / (nx * dx);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j < nx; ++j) f(i, j) = std::cos(az * i * dx + 0.3) * std::cos(ax * j * dx + 0.7);
    const auto out = spectral_laplacian(f, dx);
    double num = 0, den = 0;
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double expect = -(az * az + ax * ax) * f[k];
      num += std::pow(out[k] - expect, 2);
      den += expect * expect;
    }
    EXPECT_LT(std::sqrt(num / den), 1e-9) << kz << "," << kx;
  }
}

TEST(SpectralLaplacian, AgreesWithFourthOrderDifferences) {
  const int n = 96;
  const double dx = 10.0, L = n * dx;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> phase(0, 2 * std::numbers::pi), amp(-1, 1);
  Tensor<double> f({n, n});
  for (int kz = 0; kz <= 4; ++kz)
    for (int kx = 0; kx <= 4; ++kx) {
      const double a = amp(rng), pz = phase(rng), px = phase(rng);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          f(i, j) += a * std::cos(2 * std::numbers::pi * kz * i * dx / L + pz) *
                     std::cos(2 * std::numbers::pi * kx * j * dx / L + px);
    }
  const auto spec = spectral_laplacian(f, dx);
  const auto fd = fd4_laplacian(f, dx);
  double num = 0, den = 0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    num += std::pow(spec[k] - fd[k], 2);
    den += fd[k] * fd[k];
  }
  EXPECT_LT(std::sqrt(num / den), 0.01);
}

TEST(TimeStep, ZeroStaysZero) {
  const auto m = constant_model(2000.f);
  Propagator prop(m.values, 10, 0.25e-3, 20);
  auto s = time_step(prop.initial_state(), m, 0.25e-3, SourceTerm{0, 50, 0.0});
  for (double v : s.p_curr.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s.step_index, 1u);
}

TEST(TimeStep, RadialSymmetry) {
  const auto m = constant_model(2000.f);
  Propagator prop(m.values, 10, 0.25e-3, 20);
  const auto stf = source_time_function(ricker_wavelet(40, 0.25e-3), 2000, false);
  auto s = prop.initial_state();
  const int c = 50;
  for (int n = 0; n < 150 + 100; ++n) prop.step(s, {c, c, stf[n]});
  const auto f = prop.interior(s);
  double peak = 0;
  for (double v : f.values()) peak = std::max(peak, std::abs(v));
  // Pythagorean triples put axis and off-axis points at the same radius.
  for (auto [a, b, r] : {std::tuple{3, 4, 5}, std::tuple{6, 8, 10}, std::tuple{5, 12, 13}, std::tuple{9, 12, 15}}) {
    const double axis = f(c + r, c), off = f(c + a, c + b), off2 = f(c - b, c - a);
    EXPECT_NEAR(axis, off, 0.02 * std::max(std::abs(axis), 0.05 * peak)) << "r=" << r;
    EXPECT_NEAR(axis, off2, 0.02 * std::max(std::abs(axis), 0.05 * peak)) << "r=" << r;
  }
}

// The leapfrog scheme conserves a discrete energy; the sponge can only remove it.
TEST(TimeStep, DiscreteEnergyNonIncreasingAfterSource) {
  const auto m = constant_model(2000.f);
  Propagator prop(m.values, 10, 0.25e-3, 20);
  const auto w = ricker_wavelet(15, 0.25e-3);
  const auto stf = source_time_function(w, 4000, false);
  auto s = prop.initial_state();
  double prev = std::numeric_limits<double>::infinity();
  int increases = 0;
  for (std::size_t n = 0; n < 4000; ++n) {
    prop.step(s, {50, 50, stf[n]});
    const double e = prop.energy(s);
    if (n >= w.samples.size() && e > prev * (1 + 1e-12)) ++increases;
    prev = e;
  }
  EXPECT_EQ(increases, 0);
  EXPECT_LT(prev, 1e-3 * [&] {
    // energy right after the source switched off, for scale
    Propagator p2(m.values, 10, 0.25e-3, 20);
    auto s2 = p2.initial_state();
    for (std::size_t n = 0; n < w.samples.size(); ++n) p2.step(s2, {50, 50, stf[n]});
    return p2.energy(s2);
  }());
}

TEST(TimeStep, CflAndNaN) {
  const auto m = constant_model(4000.f);
  EXPECT_THROW(Propagator(m.values, 10, 2e-3, 20), NumericalError);
  Propagator prop(m.values, 10, 0.25e-3, 20);
  auto s = prop.initial_state();
  s.p_curr[123] = std::nan("");
  s.step_index = 17;
  try {
    Propagator::check_finite(s);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
}

TEST(SimulateShot, DirectWaveArrival) {
  const auto m = constant_model(2000.f);
  AcquisitionGeometry g;
  g.source_columns = {50};
  g.receiver_columns = {80};
  const SimParams p;
  const auto w = ricker_wavelet(p.dominant_freq, p.dt_int);
  const auto gather = simulate_shot(m, g, 0, w, p);
  ASSERT_EQ(gather.dims(), (Shape{1000, 1}));
  const double expect = 0.15 + w.peak_time();
  const double t = pick_peak(gather, 0, 150, 400, g.record_dt);
  EXPECT_NEAR(t, expect, 2 * g.record_dt);
}

TEST(SimulateShot, DirectWaveMoveoutSlope) {
  const auto m = constant_model(2500.f);
  AcquisitionGeometry g;
  g.source_columns = {20};
  for (int c = 30; c <= 70; c += 5) g.receiver_columns.push_back(c);
  const SimParams p;
  const auto w = ricker_wavelet(p.dominant_freq, p.dt_int);
  const auto gather = simulate_shot(m, g, 0, w, p);
  // least-squares slope of peak time vs offset
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = static_cast<int>(g.receiver_columns.size());
  for (int r = 0; r < n; ++r) {
    const double x = (g.receiver_columns[r] - 20) * 10.0;
    const double y = pick_peak(gather, r, 100, 500, g.record_dt);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_NEAR(slope, 1.0 / 2500.0, 0.02 / 2500.0);
}

// Interface on node row 30 (h = 300 m); that node carries the travel-time average
// (harmonic mean) velocity so the node-centred interface sits at exactly 300 m.
class TwoLayer : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = constant_model(1500.f);
    for (int r = 30; r < 100; ++r)
      for (int c = 0; c < 100; ++c) model_.values(r, c) = r == 30 ? 2.f / (1 / 1500.f + 1 / 2500.f) : 2500.f;
    geom_.source_columns = {30};
    for (int c = 0; c < 100; ++c) geom_.receiver_columns.push_back(c);
    gather_ = simulate_shot(model_, geom_, 0, ricker_wavelet(15, 0.25e-3), SimParams{});
  }
  static inline geo::VelocityModel model_;
  static inline AcquisitionGeometry geom_;
  static inline Tensor<float> gather_;
};

TEST_F(TwoLayer, ReflectionTravelTime) {
  const double delay = ricker_wavelet(15, 0.25e-3).peak_time();
  for (int off = 0; off <= 40; off += 10) {
    const double d = off * 10.0;
    const double expect = 2 * std::sqrt(300.0 * 300.0 + d * d / 4) / 1500 + delay;
    const int centre = static_cast<int>(std::lround(expect / geom_.record_dt));
    const double t = pick_peak(gather_, 30 + off, centre - 30, centre + 30, geom_.record_dt);
    EXPECT_NEAR(t, expect, 3e-3) << "offset " << d;
  }
}

TEST_F(TwoLayer, DirectWaveDominatesReflection) {
  const double delay = ricker_wavelet(15, 0.25e-3).peak_time();
  for (int off = 5; off <= 40; off += 5) {
    const int rc = 30 + off;
    const double d = off * 10.0;
    const double t_dir = d / 1500 + delay, t_ref = 2 * std::sqrt(300.0 * 300.0 + d * d / 4) / 1500 + delay;
    float direct = 0, refl = 0;
    for (int t = 0; t < 1000; ++t) {
      const double tt = t * geom_.record_dt;
      const float a = std::abs(gather_(t, rc));
      if (std::abs(tt - t_dir) < 0.06) direct = std::max(direct, a);
      if (std::abs(tt - t_ref) < 0.06) refl = std::max(refl, a);
    }
    EXPECT_GT(direct, refl) << "offset " << d;
    EXPECT_GT(refl, 0.f);
  }
}

TEST(SimulateShot, MirrorSymmetry) {
  const auto spec = geo::sample_layer_spec(21, 3, 3);
  const auto m = geo::rasterize(spec, 100, 100);
  auto mirrored = m;
  for (int r = 0; r < 100; ++r)
    for (int c = 0; c < 100; ++c) mirrored.values(r, c) = m.values(r, 99 - c);
  AcquisitionGeometry g, gm;
  g.source_columns = {17};
  gm.source_columns = {99 - 17};
  for (int c = 0; c < 100; ++c) {
    g.receiver_columns.push_back(c);
    gm.receiver_columns.push_back(99 - c);
  }
  g.record_steps = gm.record_steps = 600;
  const auto w = ricker_wavelet(15, 0.25e-3);
  const auto a = simulate_shot(m, g, 0, w);
  const auto b = simulate_shot(mirrored, gm, 0, w);
  double num = 0, den = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += std::pow(double(a[k]) - b[k], 2);
    den += double(a[k]) * a[k];
  }
  EXPECT_LT(std::sqrt(num / den), 1e-6);
}

TEST(SimulateShot, DeterministicAndDecimation) {
  const auto m = geo::rasterize(geo::sample_layer_spec(4, 2, 3), 100, 100);
  AcquisitionGeometry g;
  g.source_columns = {40};
  g.receiver_columns = {0, 13, 40, 77, 99};
  g.record_steps = 300;
  const auto w = ricker_wavelet(15, 0.25e-3);
  const auto a = simulate_shot(m, g, 0, w);
  const auto b = simulate_shot(m, g, 0, w);
  EXPECT_TRUE(a == b);

  auto fine = g;
  fine.record_dt = 0.5e-3;
  fine.record_steps = 2 * g.record_steps - 1;
  const auto f = simulate_shot(m, fine, 0, w);
  for (int t = 0; t < g.record_steps; ++t)
    for (int r = 0; r < 5; ++r) ASSERT_EQ(a(t, r), f(2 * t, r));

  auto bad = g;
  bad.record_dt = 0.3e-3;
  EXPECT_THROW(simulate_shot(m, bad, 0, w), DataError);
  bad = g;
  bad.receiver_columns = {100};
  EXPECT_THROW(simulate_shot(m, bad, 0, w), DataError);
  EXPECT_THROW(simulate_shot(m, g, 1, w), DataError);
  auto fast = m;
  fast.spacing = 1.0;
  EXPECT_THROW(simulate_shot(fast, g, 0, w), NumericalError);
}

TEST(SimulateCube, DefaultShapeAndSanity) {
  const auto m = geo::rasterize(geo::sample_layer_spec(9, 4, 3), 100, 100);
  const auto g = AcquisitionGeometry::uniform(100, 20);
  EXPECT_EQ(g.source_columns[1], 5);
  EXPECT_EQ(g.source_columns.back(), 95);
  const auto cube = simulate_cube(m, g, ricker_wavelet(15, 0.25e-3));
  ASSERT_EQ(cube.dims(), (Shape{20, 1000, 100}));
  float peak = 0;
  for (float v : cube.values()) {
    ASSERT_TRUE(std::isfinite(v));
    peak = std::max(peak, std::abs(v));
  }
  EXPECT_GT(peak, 0.f);
}

TEST(SimulateCube, Reciprocity) {
  const auto m = constant_model(2200.f);
  auto g = AcquisitionGeometry::uniform(100, 20, 700);
  const auto cube = simulate_cube(m, g, ricker_wavelet(15, 0.25e-3));
  const std::size_t T = 700, R = 100;
  for (auto [si, sj] : {std::pair{2, 9}, std::pair{4, 15}, std::pair{0, 19}}) {
    const int ci = g.source_columns[si], cj = g.source_columns[sj];
    double num = 0, den = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const double a = cube[(si * T + t) * R + cj], b = cube[(sj * T + t) * R + ci];
      num += (a - b) * (a - b);
      den += a * a;
    }
    EXPECT_LT(std::sqrt(num / den), 0.02) << ci << "<->" << cj;
  }
}
