#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "seisinv/metrics.hpp"

using namespace seisinv;
using namespace seisinv::metrics;

namespace {

Tensor<double> random_grid(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<double> t({h, w});
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Velocity grid whose forward-difference edge map is exactly `b` (last row of b ignored).
Tensor<double> from_edges(const Tensor<double>& b) {
  Tensor<double> v({b.dim(0), b.dim(1)}, 0.0);
  for (std::size_t r = 0; r + 1 < b.dim(0); ++r)
    for (std::size_t c = 0; c < b.dim(1); ++c) v(r + 1, c) = v(r, c) + (b(r, c) > 0 ? 0.1 : 0.0);
  return v;
}

Tensor<double> horizontal_edge(std::size_t n, std::size_t row) {
  Tensor<double> b({n, n}, 0.0);
  for (std::size_t c = 0; c < n; ++c) b(row, c) = 1;
  return b;
}

// Soft F1 from the definition: full 2-D Gaussian exp(-(di^2+dj^2)/(2 s^2)) over a k x k
// support, zero outside the grid.
double oracle_soft_f1(const Tensor<double>& ebar, const Tensor<double>& e, int k, double s) {
  const int H = static_cast<int>(e.dim(0)), W = static_cast<int>(e.dim(1)), r = k / 2;
  double overlap = 0, np = 0, nt = 0;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      np += ebar(i, j);
      nt += e(i, j);
      double sm = 0;
      for (int di = -r; di <= r; ++di)
        for (int dj = -r; dj <= r; ++dj) {
          const int a = i - di, b = j - dj;
          if (a < 0 || a >= H || b < 0 || b >= W) continue;
          sm += std::exp(-(di * di + dj * dj) / (2 * s * s)) * ebar(a, b);
        }
      overlap += sm * e(i, j);
    }
  const double p = overlap / np, rc = overlap / nt;
  return 2 * p * rc / (p + rc);
}

data::Sample layered_sample(std::uint64_t seed, int interfaces, int n = 64) {
  data::Sample s;
  s.spec = geo::sample_layer_spec(seed, interfaces, 2, {n, n});
  const auto m = geo::rasterize(s.spec, n, n);
  s.velocity = data::normalize_velocity(m.values);
  s.id = "s" + std::to_string(seed);
  s.type = std::to_string(interfaces);
  return s;
}

Tensor<double> to_double(const Tensor<float>& f) {
  Tensor<double> d({f.dim(0), f.dim(1)});
  for (std::size_t i = 0; i < f.size(); ++i) d[i] = f[i];
  return d;
}

}  // namespace

TEST(Pointwise, IdenticalAndOffset) {
  auto x = random_grid(10, 12, 1);
  auto e = pointwise_errors(x, x);
  EXPECT_EQ(e.mae, 0.0);
  EXPECT_EQ(e.mse, 0.0);
  auto y = x;
  for (auto& v : y.storage()) v += 0.1;
  e = pointwise_errors(y, x);
  EXPECT_NEAR(e.mae, 0.1, 1e-12);
  EXPECT_NEAR(e.mse, 0.01, 1e-12);
}

TEST(Pointwise, MatchesLoop) {
  auto a = random_grid(17, 9, 2), b = random_grid(17, 9, 3);
  double sa = 0, ss = 0;
  for (std::size_t r = 0; r < 17; ++r)
    for (std::size_t c = 0; c < 9; ++c) {
      sa += std::abs(a(r, c) - b(r, c));
      ss += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
    }
  auto e = pointwise_errors(a, b);
  EXPECT_NEAR(e.mae, sa / 153, 1e-12);
  EXPECT_NEAR(e.mse, ss / 153, 1e-12);
  EXPECT_THROW(pointwise_errors(a, random_grid(9, 17, 4)), ShapeError);
}

TEST(Edges, ConstantModelHasNone) {
  Tensor<double> v({20, 20}, 0.4);
  const auto e = detect_edges(v);
  for (double x : e.values()) EXPECT_EQ(x, 0.0);
}

TEST(Edges, InterfaceMarkedOnUpperRow) {
  Tensor<double> v({100, 100}, 0.3);
  for (std::size_t r = 50; r < 100; ++r)
    for (std::size_t c = 0; c < 100; ++c) v(r, c) = 0.5;
  auto e = detect_edges(v);
  for (std::size_t r = 0; r < 100; ++r)
    for (std::size_t c = 0; c < 100; ++c) EXPECT_EQ(e(r, c), r == 49 ? 1.0 : 0.0);
}

TEST(Edges, HigherThresholdGivesSubset) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto v = random_grid(30, 30, 10 + s);
    for (auto& x : v.storage()) x *= 0.2;
    EdgeConfig lo, hi;
    lo.threshold = 0.03;
    hi.threshold = 0.08;
    auto a = detect_edges(v, lo), b = detect_edges(v, hi);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(b[i], a[i]);
  }
}

TEST(SoftF, IdentityKernelEqualsClassicF1) {
  EdgeConfig id;
  id.kernel = 1;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(20 + s);
    std::bernoulli_distribution bit(0.15);
    Tensor<double> bp({24, 24}, 0.0), bt({24, 24}, 0.0);
    for (std::size_t r = 0; r + 1 < 24; ++r)
      for (std::size_t c = 0; c < 24; ++c) bp(r, c) = bit(rng), bt(r, c) = bit(rng);
    double tp = 0, np = 0, nt = 0;
    for (std::size_t i = 0; i < bp.size(); ++i) tp += bp[i] * bt[i], np += bp[i], nt += bt[i];
    const double p = tp / np, r = tp / nt;
    const auto f = soft_f_beta(from_edges(bp), from_edges(bt), id);
    EXPECT_EQ(f.precision, p);
    EXPECT_EQ(f.recall, r);
    EXPECT_EQ(f.value, 2 * p * r / (p + r));
    EXPECT_FALSE(f.degenerate);
  }
  auto v = from_edges(horizontal_edge(16, 5));
  EXPECT_EQ(soft_f_beta(v, v, id).value, 1.0);
}

TEST(SoftF, ShiftTableMatchesDirectConvolution) {
  const std::size_t n = 64, row = 30;
  const auto truth = horizontal_edge(n, row);
  std::vector<double> vals;
  for (std::size_t k = 0; k <= 3; ++k) {
    const auto pred = horizontal_edge(n, row + k);
    const double got = soft_f_beta(from_edges(pred), from_edges(truth)).value;
    const double ref = oracle_soft_f1(pred, truth, 7, 1.5);
    EXPECT_NEAR(got, ref, 1e-9) << "shift " << k;
    vals.push_back(got);
  }
  for (std::size_t k = 1; k < vals.size(); ++k) EXPECT_LT(vals[k], vals[k - 1]);
  EXPECT_GT(vals[3], 0.0);
  EXPECT_GT(vals[0], 1.0);  // peak-normalized smoothing of a perfect match
}

TEST(SoftF, RandomMapsMatchDirectConvolution) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(40 + s);
    std::bernoulli_distribution bit(0.1);
    Tensor<double> bp({20, 28}, 0.0), bt({20, 28}, 0.0);
    for (std::size_t r = 0; r + 1 < 20; ++r)
      for (std::size_t c = 0; c < 28; ++c) bp(r, c) = bit(rng), bt(r, c) = bit(rng);
    EXPECT_NEAR(soft_f_beta(from_edges(bp), from_edges(bt)).value, oracle_soft_f1(bp, bt, 7, 1.5), 1e-9);
  }
}

TEST(SoftF, DistantEdgesScoreNearZero) {
  const double sep = 3 * 1.5 * 3 + 1;  // beyond 3 sigma times the kernel radius
  const auto a = horizontal_edge(64, 10), b = horizontal_edge(64, 10 + static_cast<std::size_t>(sep));
  EXPECT_LT(soft_f_beta(from_edges(a), from_edges(b)).value, 1e-3);
}

TEST(SoftF, DegenerateInputsFlagged) {
  Tensor<double> flat({16, 16}, 0.5);
  auto v = from_edges(horizontal_edge(16, 4));
  for (auto r : {soft_f_beta(flat, v), soft_f_beta(v, flat), soft_f_beta(flat, flat)}) {
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.value, 0.0);
  }
}

TEST(SoftF, SmoothingAppliesOnlyToPrediction) {
  // Prediction: one edge. Truth: that edge plus a second far away.
  Tensor<double> bp = horizontal_edge(40, 8), bt = horizontal_edge(40, 8);
  for (std::size_t c = 0; c < 40; ++c) bt(25, c) = 1;
  const auto p = from_edges(bp), t = from_edges(bt);
  auto f = soft_f_beta(p, t), g = soft_f_beta(t, p);
  EXPECT_NEAR(f.precision, g.recall, 1e-12);  // the symmetric kernel makes the overlap symmetric
  EXPECT_NEAR(f.recall, g.precision, 1e-12);
  EXPECT_NEAR(f.value, g.value, 1e-12);  // so beta = 1 is symmetric
  EdgeConfig b2;
  b2.beta = 2;
  EXPECT_GT(std::abs(soft_f_beta(p, t, b2).value - soft_f_beta(t, p, b2).value), 1e-3);
}

TEST(LayerStats, PerfectAndOffset) {
  auto s = layered_sample(5, 3);
  auto v = to_double(s.velocity);
  for (const auto& l : layer_stats(v, v, s.spec)) {
    EXPECT_EQ(l.difference, 0.0);
    EXPECT_EQ(l.variance, 0.0);
    EXPECT_GT(l.cells, 0u);
  }
  auto w = v;
  for (auto& x : w.storage()) x += 0.1;
  auto st = layer_stats(w, v, s.spec);
  ASSERT_EQ(st.size(), 4u);
  for (const auto& l : st) {
    EXPECT_NEAR(l.difference, 0.1, 1e-12);
    EXPECT_NEAR(l.variance, 0.0, 1e-12);
  }
}

TEST(LayerStats, MatchesRegionLoops) {
  auto s = layered_sample(6, 4);
  auto v = to_double(s.velocity);
  auto p = random_grid(64, 64, 7);
  auto lab = geo::layer_labels(s.spec, 64, 64);
  auto st = layer_stats(p, v, s.spec);
  for (int l = 0; l < 5; ++l) {
    double sp = 0, sv = 0, n = 0;
    for (std::size_t r = 0; r < 64; ++r)
      for (std::size_t c = 0; c < 64; ++c)
        if (lab(r, c) == l) sp += p(r, c), sv += v(r, c), ++n;
    double var = 0;
    for (std::size_t r = 0; r < 64; ++r)
      for (std::size_t c = 0; c < 64; ++c)
        if (lab(r, c) == l) var += (p(r, c) - sp / n) * (p(r, c) - sp / n);
    EXPECT_NEAR(st[l].difference, sp / n - sv / n, 1e-12);
    EXPECT_NEAR(st[l].variance, var / n, 1e-12);
  }
  EXPECT_THROW(layer_stats(p, v, geo::LayeredModelSpec{}), DataError);
}

namespace {

std::vector<data::Sample> small_split() {
  std::vector<data::Sample> out;
  for (int k = 0; k < 6; ++k) out.push_back(layered_sample(100 + k, 1 + k % 4));
  return out;
}

Predictor oracle_predictor() {
  return [](const std::vector<const data::Sample*>& b) {
    std::vector<Tensor<double>> out;
    for (const auto* s : b) out.push_back(to_double(s->velocity));
    return out;
  };
}

Predictor blurred_predictor() {
  return [](const std::vector<const data::Sample*>& b) {
    std::vector<Tensor<double>> out;
    for (const auto* s : b) {
      auto v = to_double(s->velocity);
      auto w = v;
      for (std::size_t r = 1; r + 1 < 64; ++r)
        for (std::size_t c = 0; c < 64; ++c) w(r, c) = (v(r - 1, c) + v(r, c) + v(r + 1, c)) / 3;
      out.push_back(w);
    }
    return out;
  };
}

}  // namespace

TEST(Report, OraclePredictorIsPerfect) {
  auto rep = evaluate_samples(oracle_predictor(), small_split(), {}, 4);
  EXPECT_EQ(rep.aggregate.count, 6u);
  EXPECT_EQ(rep.aggregate.mae, 0.0);
  EXPECT_EQ(rep.aggregate.mse, 0.0);
  EXPECT_NEAR(rep.aggregate.ssim, 1.0, 1e-6);
  EXPECT_NEAR(rep.aggregate.mssim, 1.0, 1e-6);
  for (const auto& l : rep.layer_table) EXPECT_NEAR(l.difference, 0.0, 1e-9);
}

TEST(Report, AggregatesAreSampleMeansAndDeterministic) {
  const auto split = small_split();
  auto a = evaluate_samples(blurred_predictor(), split, {}, 4);
  auto b = evaluate_samples(blurred_predictor(), split, {}, 5);
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
  double m = 0, s = 0;
  for (const auto& x : a.samples) m += x.mse / 6, s += x.mssim / 6;
  EXPECT_NEAR(a.aggregate.mse, m, 1e-15);
  EXPECT_NEAR(a.aggregate.mssim, s, 1e-15);
  EXPECT_GT(a.aggregate.mse, 0.0);
  EXPECT_LT(a.aggregate.mssim, 1.0);
  // 4 types, layers 0..k
  EXPECT_EQ(a.layer_table.size(), 2u + 3u + 4u + 5u);
  EXPECT_THROW(evaluate_samples(blurred_predictor(), {}, {}), DataError);
}

TEST(Report, ExportRoundTripAndCsvRecomputation) {
  auto rep = evaluate_samples(blurred_predictor(), small_split());
  rep.split = "valid";
  rep.checkpoint_hash = "abc";
  const auto dir = std::filesystem::temp_directory_path() / "seisinv_metrics_test";
  std::filesystem::remove_all(dir);
  export_report(rep, dir, "valid");
  auto back = read_json(dir / "valid.json");
  EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(rep).dump());

  std::ifstream is(dir / "valid.csv");
  std::string line;
  std::getline(is, line);
  std::vector<std::vector<double>> rows;
  std::vector<double> agg;
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    std::vector<double> v;
    for (int k = 2; k <= 6; ++k) v.push_back(std::stod(f[k]));
    (f[0] == "aggregate" ? agg : rows.emplace_back()) = v;
  }
  ASSERT_EQ(rows.size(), 6u);
  ASSERT_EQ(agg.size(), 5u);
  for (int k = 0; k < 5; ++k) {
    double m = 0;
    for (const auto& r : rows) m += r[k] / rows.size();
    EXPECT_NEAR(agg[k], m, 1e-9);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "valid_layers.csv"));
  std::filesystem::remove_all(dir);
}
