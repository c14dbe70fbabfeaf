#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "seisinv/dataset.hpp"

using namespace seisinv;
using namespace seisinv::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("seisinv_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

// Small but complete recipe: 64x64 grid, 2 shots, 0.15 s records.
DatasetConfig tiny_config() {
  auto c = DatasetConfig::toy();
  c.n_per_type = 2;
  c.geometry = sim::AcquisitionGeometry::uniform(64, 2, 60);
  c.geometry.record_dt = 2.5e-3;
  c.split = {4, 2, 2};
  c.seed = 1;
  return c;
}

Tensor<float> random_cube(std::size_t S, std::size_t T, std::size_t R, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> nd;
  Tensor<float> c({S, T, R});
  for (auto& v : c.storage()) v = nd(rng);
  return c;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(NormalizeVelocity, EndpointsAndMidpoint) {
  Tensor<float> v({1, 3}, std::vector<float>{1500, 4000, 2750});
  const auto u = normalize_velocity(v);
  EXPECT_EQ(u[0], 0.0f);
  EXPECT_EQ(u[1], 1.0f);
  EXPECT_EQ(u[2], 0.5f);
}

TEST(NormalizeVelocity, RoundTripDouble) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(1500, 4000);
  Tensor<double> v({50, 50});
  for (auto& x : v.storage()) x = ud(rng);
  const auto back = denormalize_velocity(normalize_velocity(v));
  double worst = 0;
  for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(back[i] - v[i]));
  EXPECT_LT(worst, 1e-6);
}

TEST(NormalizeVelocity, RoundTripFloatModels) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = geo::rasterize(geo::sample_layer_spec(seed, 1 + seed % 4, 3), 100, 100);
    const auto back = denormalize_velocity(normalize_velocity(m.values));
    for (std::size_t i = 0; i < back.size(); ++i) ASSERT_NEAR(back[i], m.values[i], 5e-4);
  }
}

TEST(NormalizeVelocity, StrictlyMonotoneAndRangeChecked) {
  Tensor<double> v({1, 6}, std::vector<double>{1500, 1500.001, 2000, 2000.5, 3999.9, 4000});
  const auto u = normalize_velocity(v);
  for (int i = 0; i + 1 < 6; ++i) EXPECT_LT(u[i], u[i + 1]);
  Tensor<float> bad({2, 3}, 2000.f);
  bad(1, 2) = 1400.f;
  try {
    normalize_velocity(bad);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("(1, 2)"), std::string::npos) << e.what();
  }
}

TEST(NormalizeSeismic, UnitPeakPerGather) {
  const auto cube = random_cube(4, 50, 10, 1);
  const auto n = normalize_seismic(cube);
  for (std::size_t s = 0; s < 4; ++s) {
    float peak = 0;
    for (std::size_t k = 0; k < 500; ++k) peak = std::max(peak, std::abs(n[s * 500 + k]));
    EXPECT_EQ(peak, 1.0f);
  }
}

TEST(NormalizeSeismic, ScaleInvariance) {
  const auto cube = random_cube(3, 40, 8, 2);
  const auto base = normalize_seismic(cube);
  Tensor<float> x8 = cube, x7 = cube;
  for (auto& v : x8.storage()) v *= 8.f;
  for (auto& v : x7.storage()) v *= 7.f;
  EXPECT_TRUE(normalize_seismic(x8) == base);
  const auto n7 = normalize_seismic(x7);
  // 7x and 7*peak are each rounded once, then the quotient: at most 2 ulp apart
  for (std::size_t i = 0; i < base.size(); ++i) {
    const float ulp = std::nextafter(std::abs(base[i]), 2.f) - std::abs(base[i]);
    ASSERT_LE(std::abs(n7[i] - base[i]), 2 * ulp) << i;
  }
}

TEST(NormalizeSeismic, ArgmaxPerTracePreserved) {
  const auto cube = random_cube(2, 100, 6, 3);
  const auto n = normalize_seismic(cube);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t r = 0; r < 6; ++r) {
      std::size_t a = 0, b = 0;
      for (std::size_t t = 0; t < 100; ++t) {
        if (cube(s, t, r) > cube(s, a, r)) a = t;
        if (n(s, t, r) > n(s, b, r)) b = t;
      }
      EXPECT_EQ(a, b);
    }
}

TEST(NormalizeSeismic, ZeroGatherThrows) {
  auto cube = random_cube(2, 10, 4, 4);
  for (std::size_t k = 40; k < 80; ++k) cube[k] = 0.f;
  EXPECT_THROW(normalize_seismic(cube), DataError);
}

TEST(SubsampleReceivers, UniformIndices) {
  const auto all = uniform_receiver_indices(100, 100);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
  const auto k32 = uniform_receiver_indices(100, 32);
  ASSERT_EQ(k32.size(), 32u);
  EXPECT_EQ(k32.front(), 0);
  EXPECT_EQ(k32.back(), 99);
  for (int i = 1; i < 32; ++i) {
    const int d = k32[i] - k32[i - 1];
    EXPECT_TRUE(d == 3 || d == 4) << i;
    // the rounding formula, evaluated independently
    EXPECT_EQ(k32[i], static_cast<int>(std::floor(i * 99.0 / 31.0 + 0.5)));
  }
  EXPECT_THROW(uniform_receiver_indices(100, 1), DataError);
  EXPECT_THROW(uniform_receiver_indices(10, 11), DataError);
}

TEST(SubsampleReceivers, RandomSortedSeeded) {
  const auto a = random_receiver_indices(100, 16, 5);
  const auto b = random_receiver_indices(100, 16, 5);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<int>(a.begin(), a.end()).size(), 16u);
  EXPECT_NE(a, random_receiver_indices(100, 16, 6));
  ReceiverSelection sel;
  const auto cube = random_cube(2, 5, 100, 1);
  const auto out = subsample_receivers(cube, 16, "random", 5, &sel);
  EXPECT_EQ(sel.indices, a);
  EXPECT_EQ(out(1, 3, 7), cube(1, 3, a[7]));
}

TEST(SubsampleReceivers, DefaultShapes) {
  const auto cube = random_cube(20, 1500, 100, 7);
  const auto out = subsample_receivers(truncate_time(cube, 1000), 32);
  EXPECT_EQ(out.dims(), (Shape{20, 1000, 32}));
}

TEST(TruncateTime, PrefixAndIdentity) {
  const auto cube = random_cube(3, 150, 5, 8);
  EXPECT_TRUE(truncate_time(cube, 150) == cube);
  const auto t = truncate_time(cube, 100);
  EXPECT_EQ(t.dims(), (Shape{3, 100, 5}));
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < 100; ++i)
      for (std::size_t r = 0; r < 5; ++r) ASSERT_EQ(t(s, i, r), cube(s, i, r));
  EXPECT_THROW(truncate_time(cube, 0), DataError);
  EXPECT_THROW(truncate_time(cube, 151), DataError);
}

TEST(TruncateTime, CommutesWithSubsampling) {
  const auto cube = random_cube(4, 120, 40, 9);
  const auto a = truncate_time(subsample_receivers(cube, 13), 77);
  const auto b = subsample_receivers(truncate_time(cube, 77), 13);
  EXPECT_TRUE(a == b);
}

TEST(Noise, ZeroStdIsIdentity) {
  const auto cube = random_cube(2, 30, 4, 10);
  const auto out = add_gaussian_noise(cube, 0.0, 1);
  EXPECT_TRUE(out.cube == cube);
  EXPECT_EQ(out.snr_db, kSnrCapDb);
}

TEST(Noise, SnrMatchesBruteForce) {
  const auto cube = normalize_seismic(random_cube(4, 200, 16, 11));
  for (double std : {0.05, 0.3, 1.0}) {
    const auto out = add_gaussian_noise(cube, std, 42);
    double ps = 0, pn = 0;
    for (std::size_t i = 0; i < cube.size(); ++i) {
      ps += double(cube[i]) * cube[i];
      const double n = double(out.cube[i]) - cube[i];
      pn += n * n;
    }
    EXPECT_NEAR(out.snr_db, 10 * std::log10(ps / pn), 0.1) << std;
    double mean = 0;
    for (float v : out.noise.values()) mean += v;
    EXPECT_LT(std::abs(mean / cube.size()), 5 * std / std::sqrt(double(cube.size())));
  }
}

TEST(Split, DefaultSizesAndPartition) {
  DatasetManifest m;
  for (int i = 0; i < 12000; ++i) m.samples.push_back(SampleEntry{.id = "s" + std::to_string(i)});
  split(m, SplitSizes{}, 7);
  int tr = 0, va = 0, te = 0;
  for (const auto& s : m.samples) {
    tr += s.split == "train";
    va += s.split == "valid";
    te += s.split == "test";
  }
  EXPECT_EQ(tr, 10000);
  EXPECT_EQ(va, 1000);
  EXPECT_EQ(te, 1000);

  auto again = m;
  split(again, SplitSizes{}, 7);
  for (std::size_t i = 0; i < m.samples.size(); ++i) ASSERT_EQ(m.samples[i].split, again.samples[i].split);
  split(again, SplitSizes{}, 8);
  int moved = 0;
  for (std::size_t i = 0; i < m.samples.size(); ++i) moved += m.samples[i].split != again.samples[i].split;
  EXPECT_GT(moved, 0);

  SplitSizes too_big{10000, 1000, 1001};
  EXPECT_THROW(split(m, too_big, 1), DataError);
  split(m, SplitSizes{100, 10, 10}, 1);
  EXPECT_EQ(m.in_split("unused").size(), 12000u - 120u);
}

class BuiltDataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch_dir("built");
    manifest_ = build_dataset(tiny_config(), dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static inline fs::path dir_;
  static inline DatasetManifest manifest_;
};

TEST_F(BuiltDataset, CountsPerType) {
  ASSERT_EQ(manifest_.samples.size(), 8u);
  std::map<std::string, int> per_type;
  std::set<std::string> ids;
  for (const auto& s : manifest_.samples) {
    ++per_type[s.type];
    ids.insert(s.id);
  }
  EXPECT_EQ(ids.size(), 8u);
  for (const char* t : {"I", "II", "III", "IV"}) EXPECT_EQ(per_type[t], 2) << t;
  EXPECT_TRUE(manifest_.shortfall.empty());
  EXPECT_EQ(manifest_.in_split("train").size(), 4u);
}

TEST_F(BuiltDataset, EveryModelValidatesAndMatchesType) {
  const auto m = load_manifest(dir_);
  for (const auto& e : m.samples) {
    geo::VelocityModel model;
    model.values = io::load_tensor<float>(dir_ / e.model_path);
    EXPECT_TRUE(geo::validate(model).empty()) << e.id;
    const auto s = load_sample(m, e, LoadSpec{60, 16, "uniform", 0});
    const int expect = e.type == "I" ? 1 : e.type == "II" ? 2 : e.type == "III" ? 3 : 4;
    EXPECT_EQ(s.spec.interface_count, expect);
    EXPECT_EQ(s.cube.dims(), (Shape{2, 60, 16}));
    EXPECT_EQ(s.velocity.dims(), (Shape{64, 64}));
  }
  EXPECT_TRUE(verify_manifest(m).empty());
}

TEST_F(BuiltDataset, RebuildIsByteIdentical) {
  const auto other = scratch_dir("rebuild");
  build_dataset(tiny_config(), other, 2);
  for (const auto& e : manifest_.samples)
    for (const auto& rel : {e.model_path, e.cube_path, e.spec_path})
      EXPECT_EQ(file_bytes(dir_ / rel), file_bytes(other / rel)) << rel;
  EXPECT_EQ(file_bytes(dir_ / "manifest.json"), file_bytes(other / "manifest.json"));
  fs::remove_all(other);
}

TEST_F(BuiltDataset, CorruptionIsDetected) {
  const auto copy = scratch_dir("corrupt");
  fs::copy(dir_, copy, fs::copy_options::recursive);
  auto m = load_manifest(copy);
  const auto& e = m.samples[3];
  {
    std::fstream f(copy / e.cube_path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  try {
    load_sample(m, e, LoadSpec{60, 16, "uniform", 0});
    FAIL();
  } catch (const DataError& err) {
    EXPECT_NE(std::string(err.what()).find("checksum"), std::string::npos);
  }
  EXPECT_EQ(verify_manifest(m), std::vector<std::string>{e.id});
  fs::remove(copy / m.samples[0].model_path);
  EXPECT_EQ(verify_manifest(m).size(), 2u);
  fs::remove_all(copy);
}

TEST(BuildDataset, NoisyNewDomain) {
  auto base = tiny_config();
  auto c = DatasetConfig::new_domain(base, 3, 4, 1, 1);
  const auto dir = scratch_dir("noisy");
  const auto m = build_dataset(c, dir);
  ASSERT_EQ(m.samples.size(), 6u);
  EXPECT_EQ(m.cube_state, "normalized+noise");
  EXPECT_GT(m.noise_std, 0);
  // noise std equal to the dataset RMS puts the average SNR near 0 dB
  EXPECT_NEAR(m.mean_snr_db, 0.0, 1.0);
  int faulted = 0, extra = 0;
  for (const auto& e : m.samples) {
    const auto s = load_sample(m, e, LoadSpec{60, 16, "uniform", 0});
    faulted += s.spec.fault.has_value();
    extra += s.spec.interface_count == 5;
    geo::VelocityModel model;
    model.values = io::load_tensor<float>(dir / e.model_path);
    EXPECT_TRUE(geo::validate(model).empty()) << e.id;
  }
  EXPECT_EQ(faulted, 3);
  EXPECT_EQ(extra, 3);
  fs::remove_all(dir);
}

TEST(Manifest, JsonRoundTrip) {
  DatasetManifest m;
  m.config = DatasetConfig::toy();
  m.samples.push_back(SampleEntry{"I-00000", "I", 5, "models/a.sinv", "cubes/a.sinv", "specs/a.json", "0000abcd", "1234abcd", "train", 3.5});
  const auto j = nlohmann::json(m);
  const auto back = j.get<DatasetManifest>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
  EXPECT_EQ(back.config.geometry.record_dt, 2.5e-3);
}
