#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "seisinv/diffcore/gradcheck.hpp"
#include "seisinv/seisinvnet.hpp"

using namespace seisinv;
using namespace seisinv::net;

namespace {

template <class T>
Tensor<T> random_cube(Shape dims, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor<T> t(std::move(dims));
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

double grad_norm(const ad::Parameter<float>& p) {
  double s = 0;
  for (float g : p.grad.values()) s += double(g) * g;
  return std::sqrt(s);
}

}  // namespace

TEST(SeisInvNet, ParameterCountInBand) {
  SeisInvNet<float> net(SeisInvNetConfig::paper(), 1);
  const auto n = net.parameter_count();
  EXPECT_GE(n, 7'000'000u);
  EXPECT_LE(n, 13'000'000u);
  EXPECT_GE(net.longest_path(), 10u);
}

TEST(Baseline, ParameterCountInBand) {
  Baseline<float> net(BaselineConfig::paper(), 1);
  const auto n = net.parameter_count();
  EXPECT_GE(n, 30'000'000u);
  EXPECT_LE(n, 50'000'000u);
}

TEST(SeisInvNet, PaperShapes) {
  SeisInvNet<float> net(SeisInvNetConfig::paper(), 2);
  EXPECT_EQ(net.config().embedding_length(), 1000u + 20 + 32 + 128);
  ad::Tape<float> t;
  ForwardTrace<float> tr;
  auto y = net.forward(t, random_cube<float>({1, 20, 1000, 32}, 3), {}, &tr);
  EXPECT_EQ(y.dims(), (Shape{1, 1, 100, 100}));
  EXPECT_EQ(tr.feature_maps.dims(), (Shape{1, 640, 25, 25}));
  EXPECT_EQ(tr.embeddings.dims(), (Shape{640, 1180}));
}

TEST(Baseline, PaperShapesAndBottleneck) {
  Baseline<float> net(BaselineConfig::paper(), 2);
  ad::Tape<float> t;
  auto cube = random_cube<float>({1, 20, 1000, 32}, 3);
  auto y = net.forward(t, cube, {});
  EXPECT_EQ(y.dims(), (Shape{1, 1, 100, 100}));
  auto code = net.encode(t, t.constant(cube), false);
  EXPECT_EQ(code.dims()[2], 1u);
  EXPECT_EQ(code.dims()[3], 1u);
}

TEST(SeisInvNet, WrongInputShapeNamesDims) {
  SeisInvNet<float> net(SeisInvNetConfig::toy(), 1);
  ad::Tape<float> t;
  try {
    net.forward(t, Tensor<float>({1, 8, 300, 16}), {});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[1,8,300,16]"), std::string::npos);
  }
}

TEST(SeisInvNet, GlobalScheduleMustReachOnePixel) {
  auto cfg = SeisInvNetConfig::toy();
  cfg.global.pop_back();
  EXPECT_THROW(SeisInvNet<float>(cfg, 1), DataError);
}

TEST(SeisInvNet, ObservationOneHot) {
  SeisInvNet<float> net(SeisInvNetConfig::paper(), 1);
  auto v = net.observation_onehot(0, 0);
  EXPECT_EQ(v[0], 1.0f);
  EXPECT_EQ(v[20], 1.0f);
  std::set<std::vector<float>> seen;
  for (std::size_t s = 0; s < 20; ++s)
    for (std::size_t r = 0; r < 32; ++r) {
      auto o = net.observation_onehot(s, r);
      float sum = 0;
      for (float x : o.values()) sum += x;
      EXPECT_EQ(sum, 2.0f);
      seen.insert({o.values().begin(), o.values().end()});
    }
  EXPECT_EQ(seen.size(), 640u);
  EXPECT_THROW(net.observation_onehot(20, 0), DataError);
  EXPECT_THROW(net.observation_onehot(0, 32), DataError);
}

TEST(SeisInvNet, NeighborhoodKeepsShapeAndIsLocal) {
  SeisInvNet<float> net(SeisInvNetConfig::toy(), 4);
  auto a = random_cube<float>({1, 1, 400, 16}, 5);
  ad::Tape<float> t;
  auto ya = net.neighborhood_encode(t, t.constant(a), false).value();
  EXPECT_EQ(ya.dims(), a.dims());
  EXPECT_EQ(net.neighborhood_encode(t, t.constant(a), false).value(), ya);

  // Three 3x3 layers: receptive half-width 3 along receivers and time.
  auto b = a;
  b(0, 0, 200, 5) += 1.0f;
  auto yb = net.neighborhood_encode(t, t.constant(b), false).value();
  for (std::size_t r = 0; r < 16; ++r) {
    double diff = 0;
    for (std::size_t k = 0; k < 400; ++k) diff += std::abs(yb(0, 0, k, r) - ya(0, 0, k, r));
    if (r + 3 < 5 || r > 8) EXPECT_EQ(diff, 0.0) << "column " << r;
    if (r == 5) EXPECT_GT(diff, 0.0);
  }
  for (std::size_t k = 0; k < 400; ++k)
    if (k + 3 < 200 || k > 203) EXPECT_EQ(yb(0, 0, k, 5), ya(0, 0, k, 5));
}

TEST(SeisInvNet, GlobalContextShapeAndGradientFlow) {
  SeisInvNet<float> net(SeisInvNetConfig::toy(), 6);
  auto a = random_cube<float>({2, 1, 400, 16}, 7);
  for (std::size_t i = 0; i < a.size() / 2; ++i) a[a.size() / 2 + i] = a[i];
  ad::Tape<float> t;
  auto x = t.variable(a);
  auto g = net.global_encode(t, x, false);
  ASSERT_EQ(g.dims(), (Shape{2, 64}));
  for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(g.value()(0, c), g.value()(1, c));
  t.backward(ad::sum(g));
  double n = 0;
  for (float v : t.grad(x).values()) n += std::abs(v);
  EXPECT_GT(n, 0.0);
}

TEST(SeisInvNet, EmbeddingBlocks) {
  auto cfg = SeisInvNetConfig::toy();
  SeisInvNet<float> net(cfg, 8);
  auto cube = random_cube<float>({1, 8, 400, 16}, 9);
  ad::Tape<float> t;
  auto prof = t.constant(cube.reshaped({8, 1, 400, 16}));
  auto e = net.embed(t, prof, false).value();
  ASSERT_EQ(e.dims(), (Shape{128, 400 + 8 + 16 + 64}));
  auto nb = net.neighborhood_encode(t, prof, false).value();
  auto ctx = net.global_encode(t, prof, false).value();
  for (std::size_t s : {0u, 3u, 7u})
    for (std::size_t r : {0u, 9u, 15u}) {
      const std::size_t row = s * 16 + r;
      for (std::size_t k = 0; k < 400; ++k) ASSERT_EQ(e(row, k), nb(s, 0, k, r));
      auto oh = net.observation_onehot(s, r);
      for (std::size_t k = 0; k < 24; ++k) ASSERT_EQ(e(row, 400 + k), oh[k]);
      for (std::size_t k = 0; k < 64; ++k) ASSERT_EQ(e(row, 424 + k), ctx(s, k));
    }
  // same shot, different receivers: one-hot blocks differ, context identical
  bool differ = false;
  for (std::size_t k = 400; k < 424; ++k) differ = differ || e(2 * 16 + 1, k) != e(2 * 16 + 4, k);
  EXPECT_TRUE(differ);
}

TEST(SeisInvNet, ChangingOneTraceOnlyTouchesItsShot) {
  SeisInvNet<float> net(SeisInvNetConfig::toy(), 10);
  auto a = random_cube<float>({1, 8, 400, 16}, 11);
  auto b = a;
  const std::size_t s0 = 3, r0 = 6;
  for (std::size_t k = 0; k < 400; ++k) b(0, s0, k, r0) *= -0.5f;
  ForwardTrace<float> ta, tb;
  ad::Tape<float> t;
  net.forward(t, a, {}, &ta);
  net.forward(t, b, {}, &tb);
  const std::size_t L = ta.embeddings.dim(1);
  for (std::size_t s = 0; s < 8; ++s)
    for (std::size_t r = 0; r < 16; ++r) {
      const std::size_t row = s * 16 + r;
      bool nb_same = true, oh_same = true;
      for (std::size_t k = 0; k < 400; ++k) nb_same = nb_same && ta.embeddings(row, k) == tb.embeddings(row, k);
      for (std::size_t k = 400; k < 424; ++k) oh_same = oh_same && ta.embeddings(row, k) == tb.embeddings(row, k);
      EXPECT_TRUE(oh_same);
      if (s != s0) {
        for (std::size_t k = 0; k < L; ++k) ASSERT_EQ(ta.embeddings(row, k), tb.embeddings(row, k));
      } else if (r + 3 < r0 || r > r0 + 3) {
        EXPECT_TRUE(nb_same) << "receiver " << r;
      }
    }
}

TEST(SeisInvNet, GeneratorIsEquivariantUnderRowSwap) {
  SeisInvNet<float> net(SeisInvNetConfig::toy(), 12);
  auto e = random_cube<float>({5, 488}, 13);
  auto swapped = e;
  for (std::size_t k = 0; k < 488; ++k) std::swap(swapped(1, k), swapped(3, k));
  ad::Tape<float> t;
  auto fa = net.generate(t, t.constant(e), false).value();
  auto fb = net.generate(t, t.constant(swapped), false).value();
  ASSERT_EQ(fa.dims(), (Shape{5, 256}));
  for (std::size_t k = 0; k < 256; ++k) {
    EXPECT_EQ(fa(1, k), fb(3, k));
    EXPECT_EQ(fa(3, k), fb(1, k));
    EXPECT_EQ(fa(0, k), fb(0, k));
  }
}

TEST(SeisInvNet, EvalDeterministicTrainingUsesDropout) {
  SeisInvNet<float> net(SeisInvNetConfig::toy(), 14);
  auto cube = random_cube<float>({2, 8, 400, 16}, 15);
  ad::Tape<float> t;
  auto y1 = net.forward(t, cube, {}).value();
  auto y2 = net.forward(t, cube, {}).value();
  EXPECT_EQ(y1, y2);
  Rng r1(1), r2(2);
  auto z1 = net.forward(t, cube, {true, &r1}).value();
  auto z2 = net.forward(t, cube, {true, &r2}).value();
  EXPECT_NE(z1, z2);
  EXPECT_THROW(net.forward(t, cube, {true, nullptr}), UsageError);
}

TEST(SeisInvNet, TraceMaskZeroesFeatureMaps) {
  SeisInvNet<float> net(SeisInvNetConfig::toy(), 16);
  auto cube = random_cube<float>({1, 8, 400, 16}, 17);
  Tensor<float> keep({1, 128}, 1.0f);
  ad::Tape<float> t;
  auto full = net.forward(t, cube, {}).value();
  auto all = net.forward(t, cube, {false, nullptr, &keep}).value();
  EXPECT_EQ(full, all);
  for (std::size_t k = 0; k < 128; k += 2) keep[k] = 0;
  auto half = net.forward(t, cube, {false, nullptr, &keep}).value();
  EXPECT_NE(full, half);
}

TEST(SeisInvNet, GradientReachesEveryGroup) {
  SeisInvNet<float> net(SeisInvNetConfig::toy(), 18);
  auto cube = random_cube<float>({2, 8, 400, 16}, 19);
  net.params().zero_grad();
  ad::Tape<float> t;
  Rng rng(3);
  auto y = net.forward(t, cube, {true, &rng});
  t.backward(ad::mean(ad::square(ad::add_scalar(y, -0.3f))));
  for (const char* group : {"encoder.neighborhood", "encoder.global", "generator", "decoder"}) {
    double n = 0;
    for (auto& p : net.params().all())
      if (p.trainable && p.name.rfind(group, 0) == 0) n += grad_norm(p);
    EXPECT_GT(n, 0.0) << group;
  }
}

TEST(SeisInvNet, MiniatureEndToEndGradientCheck) {
  SeisInvNet<double> net(SeisInvNetConfig::mini(), 20);
  auto cube = random_cube<double>({2, 2, 40, 4}, 21);
  auto target = random_cube<double>({2, 1, 16, 16}, 22);
  auto r = ad::grad_check(
      [&](ad::Tape<double>& t) {
        Rng rng(5);
        auto y = net.forward(t, cube, {true, &rng});
        return ad::mean(ad::square(ad::sub(y, t.constant(target))));
      },
      net.params().trainable());
  EXPECT_LE(r.max_rel_error, 1e-3) << r.worst_param << "[" << r.worst_index << "]";
  EXPECT_GT(r.checked, 300u);
}

TEST(Baseline, MiniatureEndToEndGradientCheck) {
  // Batch of 4: with two samples the 1x1 bottleneck norm pins outputs at +-1 and
  // leaves only roundoff-sized gradients upstream.
  Baseline<double> net(BaselineConfig::mini(), 23);
  auto cube = random_cube<double>({4, 2, 40, 4}, 24);
  auto target = random_cube<double>({4, 1, 16, 16}, 25);
  auto r = ad::grad_check(
      [&](ad::Tape<double>& t) {
        Rng rng(6);
        auto y = net.forward(t, cube, {true, &rng});
        return ad::mean(ad::square(ad::sub(y, t.constant(target))));
      },
      net.params().trainable());
  EXPECT_LE(r.max_rel_error, 1e-3) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Network, JsonRoundTripRebuildsSameParameters) {
  SeisInvNet<float> a(SeisInvNetConfig::toy(), 30);
  auto b = make_network<float>(describe(a), 30);
  ASSERT_EQ(a.params().all().size(), b->params().all().size());
  for (std::size_t i = 0; i < a.params().all().size(); ++i) {
    EXPECT_EQ(a.params().all()[i].name, b->params().all()[i].name);
    EXPECT_EQ(a.params().all()[i].value, b->params().all()[i].value);
  }
  EXPECT_THROW(make_network<float>({{"kind", "unet"}, {"config", {}}}, 1), DataError);
}
