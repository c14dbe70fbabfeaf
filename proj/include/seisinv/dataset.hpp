#pragma once

// Dataset assembly: layered models + simulated cubes on disk, a JSON manifest with
// CRC32 checksums, and the preprocessing chain used by training
// (truncate -> subsample receivers -> per-gather max-abs normalization).
//
// On-disk layout under the dataset root:
//   manifest.json
//   models/<id>.sinv   velocity [H, W] in m/s
//   cubes/<id>.sinv    seismic cube [S, T, R] (raw, or normalized + noise)
//   specs/<id>.json    generating LayeredModelSpec

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "seisinv/core/error.hpp"
#include "seisinv/core/random.hpp"
#include "seisinv/core/sinv_io.hpp"
#include "seisinv/core/tensor.hpp"
#include "seisinv/geomodel.hpp"
#include "seisinv/wavesim.hpp"

namespace seisinv::sim {

inline void to_json(nlohmann::json& j, const AcquisitionGeometry& g) {
  j = nlohmann::json{{"source_columns", g.source_columns}, {"receiver_columns", g.receiver_columns},
                     {"source_row", g.source_row},         {"receiver_row", g.receiver_row},
                     {"record_dt", g.record_dt},           {"record_steps", g.record_steps}};
}

inline void from_json(const nlohmann::json& j, AcquisitionGeometry& g) {
  j.at("source_columns").get_to(g.source_columns);
  j.at("receiver_columns").get_to(g.receiver_columns);
  g.source_row = j.value("source_row", 0);
  g.receiver_row = j.value("receiver_row", 0);
  j.at("record_dt").get_to(g.record_dt);
  j.at("record_steps").get_to(g.record_steps);
}

inline void to_json(nlohmann::json& j, const SimParams& p) {
  j = nlohmann::json{{"dt_int", p.dt_int},
                     {"dominant_freq", p.dominant_freq},
                     {"line_source_correction", p.line_source_correction},
                     {"sponge_reflection", p.sponge_reflection},
                     {"top_margin", p.top_margin}};
}

inline void from_json(const nlohmann::json& j, SimParams& p) {
  p = SimParams{};
  p.dt_int = j.value("dt_int", p.dt_int);
  p.dominant_freq = j.value("dominant_freq", p.dominant_freq);
  p.line_source_correction = j.value("line_source_correction", p.line_source_correction);
  p.sponge_reflection = j.value("sponge_reflection", p.sponge_reflection);
  p.top_margin = j.value("top_margin", p.top_margin);
}

}  // namespace seisinv::sim

namespace seisinv::data {

// --- normalization -------------------------------------------------------------

struct NormalizationSpec {
  double velocity_min = geo::kMinVelocity;
  double velocity_max = geo::kMaxVelocity;
};

inline void to_json(nlohmann::json& j, const NormalizationSpec& n) {
  j = nlohmann::json{{"velocity_min", n.velocity_min}, {"velocity_max", n.velocity_max}, {"seismic", "gather-maxabs"}};
}
inline void from_json(const nlohmann::json& j, NormalizationSpec& n) {
  j.at("velocity_min").get_to(n.velocity_min);
  j.at("velocity_max").get_to(n.velocity_max);
}

/// Affine map of m/s onto [0, 1]; values outside the range (beyond 1e-6 m/s) are rejected.
template <class T>
Tensor<T> normalize_velocity(const Tensor<T>& v, const NormalizationSpec& n = {}) {
  if (!(n.velocity_max > n.velocity_min)) throw DataError("normalization needs velocity_max > velocity_min");
  Tensor<T> out(v.dims());
  const double span = n.velocity_max - n.velocity_min;
  const std::size_t cols = v.rank() >= 1 ? v.dims().back() : 1;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i];
    if (!(x >= n.velocity_min - 1e-6 && x <= n.velocity_max + 1e-6))
      throw DataError("velocity " + std::to_string(x) + " at cell (" + std::to_string(i / cols) + ", " +
                      std::to_string(i % cols) + ") outside [" + std::to_string(n.velocity_min) + ", " +
                      std::to_string(n.velocity_max) + "]");
    out[i] = static_cast<T>((x - n.velocity_min) / span);
  }
  return out;
}

template <class T>
Tensor<T> denormalize_velocity(const Tensor<T>& u, const NormalizationSpec& n = {}) {
  Tensor<T> out(u.dims());
  const double span = n.velocity_max - n.velocity_min;
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = static_cast<T>(n.velocity_min + span * u[i]);
  return out;
}

/// Divides every gather (trailing [T, R] slab) by its own max |amplitude|.
inline Tensor<float> normalize_seismic(const Tensor<float>& cube) {
  if (cube.rank() < 2) throw ShapeError("normalize_seismic expects [..., T, R]");
  const std::size_t gather = cube.dim(cube.rank() - 2) * cube.dim(cube.rank() - 1);
  Tensor<float> out(cube.dims());
  for (std::size_t g = 0; g * gather < cube.size(); ++g) {
    const float* in = cube.data() + g * gather;
    float peak = 0.f;
    for (std::size_t k = 0; k < gather; ++k) {
      if (!std::isfinite(in[k])) throw NumericalError("non-finite sample in gather " + std::to_string(g));
      peak = std::max(peak, std::abs(in[k]));
    }
    if (peak == 0.f) throw DataError("gather " + std::to_string(g) + " is all zero");
    float* o = out.data() + g * gather;
    for (std::size_t k = 0; k < gather; ++k) o[k] = static_cast<float>(static_cast<double>(in[k]) / peak);
  }
  return out;
}

// --- receiver / time selection ----------------------------------------------------

/// round(i (R-1) / (k-1)) for i in 0..k-1.
inline std::vector<int> uniform_receiver_indices(int R, int k) {
  if (k < 2) throw DataError("uniform receiver subsampling needs k >= 2");
  if (k > R) throw DataError("cannot keep " + std::to_string(k) + " of " + std::to_string(R) + " receivers");
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = static_cast<int>(std::lround(static_cast<double>(i) * (R - 1) / (k - 1)));
  return idx;
}

/// Sorted seeded subset of size k.
inline std::vector<int> random_receiver_indices(int R, int k, std::uint64_t seed) {
  if (k < 1 || k > R) throw DataError("cannot keep " + std::to_string(k) + " of " + std::to_string(R) + " receivers");
  std::vector<int> all(R);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(derive_seed(seed, {0x5ec7ULL}));
  // partial Fisher-Yates; std::shuffle's exact sequence is implementation defined
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, R - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

inline Tensor<float> select_receivers(const Tensor<float>& cube, const std::vector<int>& idx) {
  if (cube.rank() != 3) throw ShapeError("expected cube [S, T, R], got " + shape_str(cube.dims()));
  const std::size_t S = cube.dim(0), T = cube.dim(1), R = cube.dim(2), K = idx.size();
  Tensor<float> out({S, T, K});
  for (int r : idx)
    if (r < 0 || static_cast<std::size_t>(r) >= R) throw DataError("receiver index " + std::to_string(r) + " out of range");
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < K; ++k) out(s, t, k) = cube(s, t, static_cast<std::size_t>(idx[k]));
  return out;
}

struct ReceiverSelection {
  std::string mode = "uniform";  // "uniform" | "random"
  std::uint64_t seed = 0;
  std::vector<int> indices;
};

inline Tensor<float> subsample_receivers(const Tensor<float>& cube, int k, const std::string& mode = "uniform",
                                         std::uint64_t seed = 0, ReceiverSelection* selection = nullptr) {
  if (cube.rank() != 3) throw ShapeError("expected cube [S, T, R], got " + shape_str(cube.dims()));
  const int R = static_cast<int>(cube.dim(2));
  std::vector<int> idx;
  if (mode == "uniform") idx = uniform_receiver_indices(R, k);
  else if (mode == "random") idx = random_receiver_indices(R, k, seed);
  else throw DataError("unknown receiver subsampling mode '" + mode + "'");
  if (selection) *selection = ReceiverSelection{mode, seed, idx};
  return select_receivers(cube, idx);
}

inline Tensor<float> truncate_time(const Tensor<float>& cube, int t_keep) {
  if (cube.rank() != 3) throw ShapeError("expected cube [S, T, R], got " + shape_str(cube.dims()));
  if (t_keep <= 0) throw DataError("truncate_time needs T' > 0");
  const std::size_t S = cube.dim(0), T = cube.dim(1), R = cube.dim(2), Tk = static_cast<std::size_t>(t_keep);
  if (Tk > T) throw DataError("cannot keep " + std::to_string(t_keep) + " of " + std::to_string(T) + " time samples");
  Tensor<float> out({S, Tk, R});
  for (std::size_t s = 0; s < S; ++s)
    std::copy_n(cube.data() + s * T * R, Tk * R, out.data() + s * Tk * R);
  return out;
}

// --- noise -------------------------------------------------------------------

// SNR reported when no noise was added.
inline constexpr double kSnrCapDb = 999.0;

inline double mean_power(const Tensor<float>& x) {
  double s = 0.0;
  for (float v : x.values()) s += static_cast<double>(v) * v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

struct NoisyCube {
  Tensor<float> cube;
  Tensor<float> noise;  // the realization that was added
  double snr_db = kSnrCapDb;
};

/// Adds zero-mean Gaussian noise with absolute standard deviation `noise_std`.
inline NoisyCube add_gaussian_noise(const Tensor<float>& cube, double noise_std, std::uint64_t seed) {
  if (noise_std < 0) throw DataError("noise_std must be >= 0");
  NoisyCube out{cube, Tensor<float>(cube.dims()), kSnrCapDb};
  if (noise_std == 0) return out;
  Rng rng(derive_seed(seed, {0x9015eULL}));
  std::normal_distribution<double> nd(0.0, noise_std);
  for (std::size_t i = 0; i < cube.size(); ++i) {
    out.noise[i] = static_cast<float>(nd(rng));
    out.cube[i] = cube[i] + out.noise[i];
  }
  const double pn = mean_power(out.noise);
  out.snr_db = pn > 0 ? std::min(kSnrCapDb, 10.0 * std::log10(mean_power(cube) / pn)) : kSnrCapDb;
  return out;
}

// --- config & manifest --------------------------------------------------------

struct SplitSizes {
  int train = 10000;
  int valid = 1000;
  int test = 1000;
  int total() const { return train + valid + test; }
};

/// Dataset recipe. Domain "old" draws types I-IV (1-4 interfaces); domain "new"
/// draws faulted models (1-4 interfaces plus a throw) and models with 5 interfaces.
struct DatasetConfig {
  std::string domain = "old";
  int n_per_type = 3000;
  geo::GridExtent grid{100, 100};
  double spacing = 10.0;
  int undulation_bound = 3;
  sim::AcquisitionGeometry geometry = sim::AcquisitionGeometry::uniform(100, 20, 1000);
  sim::SimParams sim;
  std::uint64_t seed = 0;
  double noise_fraction = 0.0;  // noise std as a fraction of the dataset RMS of normalized cubes
  SplitSizes split;

  std::vector<std::string> types() const {
    if (domain == "old") return {"I", "II", "III", "IV"};
    if (domain == "new") return {"fault", "extra"};
    throw DataError("unknown dataset domain '" + domain + "'");
  }

  static DatasetConfig paper() { return {}; }

  /// Desk-scale profile: 64x64 grid, 8 sources, 95 models per type split 300/40/40.
  /// Recording is 400 samples at 2.5 ms so reflections from the bottom of the grid arrive in time.
  static DatasetConfig toy() {
    DatasetConfig c;
    c.n_per_type = 95;
    c.grid = {64, 64};
    c.geometry = sim::AcquisitionGeometry::uniform(64, 8, 400);
    c.geometry.record_dt = 2.5e-3;
    c.sim.dt_int = 0.5e-3;
    c.split = {300, 40, 40};
    return c;
  }

  /// Small noisy new-domain set matched to `base`: faulted and five-interface models.
  static DatasetConfig new_domain(const DatasetConfig& base, int n_per_type, int train, int valid, int test) {
    DatasetConfig c = base;
    c.domain = "new";
    c.n_per_type = n_per_type;
    c.undulation_bound = std::min(base.undulation_bound, 2);  // five interfaces must fit the grid
    c.noise_fraction = 1.0;
    c.split = {train, valid, test};
    c.seed = derive_seed(base.seed, {0x2e3ULL});
    return c;
  }
};

inline void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = nlohmann::json{{"domain", c.domain},
                     {"n_per_type", c.n_per_type},
                     {"grid", {{"rows", c.grid.rows}, {"cols", c.grid.cols}}},
                     {"spacing", c.spacing},
                     {"undulation_bound", c.undulation_bound},
                     {"geometry", c.geometry},
                     {"sim", c.sim},
                     {"seed", c.seed},
                     {"noise_fraction", c.noise_fraction},
                     {"split", {{"train", c.split.train}, {"valid", c.split.valid}, {"test", c.split.test}}}};
}

inline void from_json(const nlohmann::json& j, DatasetConfig& c) {
  c = DatasetConfig{};
  c.domain = j.value("domain", c.domain);
  c.n_per_type = j.value("n_per_type", c.n_per_type);
  if (j.contains("grid")) c.grid = {j["grid"].at("rows").get<int>(), j["grid"].at("cols").get<int>()};
  c.spacing = j.value("spacing", c.spacing);
  c.undulation_bound = j.value("undulation_bound", c.undulation_bound);
  if (j.contains("geometry")) j["geometry"].get_to(c.geometry);
  if (j.contains("sim")) j["sim"].get_to(c.sim);
  c.seed = j.value("seed", c.seed);
  c.noise_fraction = j.value("noise_fraction", c.noise_fraction);
  if (j.contains("split"))
    c.split = {j["split"].at("train").get<int>(), j["split"].at("valid").get<int>(), j["split"].at("test").get<int>()};
}

struct SampleEntry {
  std::string id;
  std::string type;
  std::uint64_t seed = 0;
  std::string model_path;  // relative to the dataset root
  std::string cube_path;
  std::string spec_path;
  std::string model_crc32;
  std::string cube_crc32;
  std::string split;  // "train" | "valid" | "test" | "unused" | ""
  double snr_db = kSnrCapDb;
};

inline void to_json(nlohmann::json& j, const SampleEntry& e) {
  j = nlohmann::json{{"id", e.id},
                     {"type", e.type},
                     {"seed", e.seed},
                     {"model", {{"path", e.model_path}, {"crc32", e.model_crc32}}},
                     {"cube", {{"path", e.cube_path}, {"crc32", e.cube_crc32}}},
                     {"spec", e.spec_path},
                     {"split", e.split},
                     {"snr_db", e.snr_db}};
}

inline void from_json(const nlohmann::json& j, SampleEntry& e) {
  j.at("id").get_to(e.id);
  j.at("type").get_to(e.type);
  j.at("seed").get_to(e.seed);
  j.at("model").at("path").get_to(e.model_path);
  j.at("model").at("crc32").get_to(e.model_crc32);
  j.at("cube").at("path").get_to(e.cube_path);
  j.at("cube").at("crc32").get_to(e.cube_crc32);
  j.at("spec").get_to(e.spec_path);
  e.split = j.value("split", "");
  e.snr_db = j.value("snr_db", kSnrCapDb);
}

struct DatasetManifest {
  static constexpr int kVersion = 1;
  int version = kVersion;
  DatasetConfig config;
  NormalizationSpec normalization;
  std::string cube_state = "raw";  // "raw" or "normalized+noise"
  double noise_std = 0.0;          // absolute std added to normalized cubes
  double mean_snr_db = kSnrCapDb;
  std::uint64_t split_seed = 0;
  std::vector<SampleEntry> samples;
  std::vector<std::string> shortfall;  // skipped samples with reasons
  std::filesystem::path root;          // not serialized

  std::vector<const SampleEntry*> in_split(const std::string& name) const {
    std::vector<const SampleEntry*> out;
    for (const auto& s : samples)
      if (s.split == name) out.push_back(&s);
    return out;
  }
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"version", m.version},         {"config", m.config},
                     {"normalization", m.normalization}, {"cube_state", m.cube_state},
                     {"noise_std", m.noise_std},     {"mean_snr_db", m.mean_snr_db},
                     {"split_seed", m.split_seed},   {"samples", m.samples},
                     {"shortfall", m.shortfall}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("version").get_to(m.version);
  if (m.version != DatasetManifest::kVersion) throw DataError("unsupported manifest version " + std::to_string(m.version));
  j.at("config").get_to(m.config);
  j.at("normalization").get_to(m.normalization);
  m.cube_state = j.value("cube_state", "raw");
  m.noise_std = j.value("noise_std", 0.0);
  m.mean_snr_db = j.value("mean_snr_db", kSnrCapDb);
  m.split_seed = j.value("split_seed", std::uint64_t{0});
  j.at("samples").get_to(m.samples);
  m.shortfall = j.value("shortfall", std::vector<std::string>{});
}

inline void save_manifest(const DatasetManifest& m) {
  std::ofstream os(m.root / "manifest.json", std::ios::trunc);
  if (!os) throw DataError("cannot write " + (m.root / "manifest.json").string());
  os << nlohmann::json(m).dump(1) << '\n';
}

inline DatasetManifest load_manifest(const std::filesystem::path& root) {
  const auto path = std::filesystem::is_directory(root) ? root / "manifest.json" : root;
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    nlohmann::json::parse(is).get_to(m);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  m.root = path.parent_path();
  std::set<std::string> ids;
  for (const auto& s : m.samples)
    if (!ids.insert(s.id).second) throw DataError(path.string() + ": duplicate sample id " + s.id);
  return m;
}

/// Random disjoint split; leftovers beyond the requested sizes are marked "unused".
inline void split(DatasetManifest& m, const SplitSizes& sizes, std::uint64_t seed) {
  const int n = static_cast<int>(m.samples.size());
  if (sizes.train < 0 || sizes.valid < 0 || sizes.test < 0) throw DataError("split sizes must be >= 0");
  if (sizes.total() > n)
    throw DataError("split needs " + std::to_string(sizes.total()) + " samples, dataset has " + std::to_string(n));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x5b117ULL}));
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  for (int k = 0; k < n; ++k) {
    auto& s = m.samples[order[k]];
    if (k < sizes.train) s.split = "train";
    else if (k < sizes.train + sizes.valid) s.split = "valid";
    else if (k < sizes.total()) s.split = "test";
    else s.split = "unused";
  }
  m.split_seed = seed;
}

// --- building -----------------------------------------------------------------

namespace detail {

inline geo::LayeredModelSpec sample_for_type(const DatasetConfig& c, const std::string& type, std::uint64_t seed) {
  if (c.domain == "old") {
    const auto types = c.types();
    const auto it = std::find(types.begin(), types.end(), type);
    if (it == types.end()) throw DataError("unknown sample type '" + type + "'");
    const int n = static_cast<int>(it - types.begin()) + 1;  // type I has one interface, ...
    return geo::sample_layer_spec(seed, n, c.undulation_bound, c.grid);
  }
  if (type == "fault") {
    const int n = 1 + static_cast<int>(seed % 4);
    auto s = geo::sample_layer_spec(seed, n, c.undulation_bound, c.grid);
    geo::add_fault(s, seed, c.grid.rows);
    return s;
  }
  return geo::sample_layer_spec(seed, 5, c.undulation_bound, c.grid);
}

template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::string sample_id(const std::string& type, int k) {
  std::ostringstream os;
  os << type << '-' << std::setw(5) << std::setfill('0') << k;
  return os.str();
}

}  // namespace detail

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Generates models and cubes under `out_dir` and writes the manifest. Per-sample
/// seeds derive from config.seed, so reruns reproduce identical files.
inline DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir,
                                     unsigned threads = 1, const ProgressFn& progress = {}) {
  namespace fs = std::filesystem;
  if (config.n_per_type < 1) throw DataError("n_per_type must be >= 1");
  std::error_code ec;
  for (const char* sub : {"models", "cubes", "specs"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw DataError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  DatasetManifest m;
  m.config = config;
  m.root = out_dir;
  const auto types = config.types();
  for (std::size_t t = 0; t < types.size(); ++t)
    for (int k = 0; k < config.n_per_type; ++k) {
      SampleEntry e;
      e.type = types[t];
      e.id = detail::sample_id(types[t], k);
      e.seed = derive_seed(config.seed, {t, static_cast<std::uint64_t>(k)});
      e.model_path = "models/" + e.id + ".sinv";
      e.cube_path = "cubes/" + e.id + ".sinv";
      e.spec_path = "specs/" + e.id + ".json";
      m.samples.push_back(e);
    }

  const auto wavelet = sim::ricker_wavelet(config.sim.dominant_freq, config.sim.dt_int);
  std::vector<std::string> failure(m.samples.size());
  std::vector<double> power(m.samples.size(), 0.0);
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  const bool noisy = config.noise_fraction > 0;
  detail::parallel_for(m.samples.size(), threads, [&](std::size_t i) {
    auto& e = m.samples[i];
    try {
      const auto spec = detail::sample_for_type(config, e.type, e.seed);
      const auto model = geo::rasterize(spec, config.grid.rows, config.grid.cols, config.spacing);
      if (auto v = geo::validate(model); !v.empty()) throw DataError("generated model fails validate: " + v[0].kind);
      auto cube = sim::simulate_cube(model, config.geometry, wavelet, config.sim);
      if (noisy) {
        cube = normalize_seismic(cube);
        power[i] = mean_power(cube);
      }
      io::save_tensor(out_dir / e.model_path, model.values);
      io::save_tensor(out_dir / e.cube_path, cube);
      std::ofstream(out_dir / e.spec_path, std::ios::trunc) << nlohmann::json(spec).dump() << '\n';
    } catch (const Error& err) {
      failure[i] = err.what();
    }
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(++done, m.samples.size());
    }
  });

  // Noise std is a fixed fraction of the dataset RMS, so it needs every clean cube first.
  if (noisy) {
    double sum = 0.0;
    int n_ok = 0;
    for (std::size_t i = 0; i < m.samples.size(); ++i)
      if (failure[i].empty()) sum += power[i], ++n_ok;
    if (n_ok == 0) throw DataError("no sample could be generated");
    m.noise_std = config.noise_fraction * std::sqrt(sum / n_ok);
    m.cube_state = "normalized+noise";
    detail::parallel_for(m.samples.size(), threads, [&](std::size_t i) {
      if (!failure[i].empty()) return;
      auto& e = m.samples[i];
      const auto clean = io::load_tensor<float>(out_dir / e.cube_path);
      const auto noisy_cube = add_gaussian_noise(clean, m.noise_std, e.seed);
      e.snr_db = noisy_cube.snr_db;
      io::save_tensor(out_dir / e.cube_path, noisy_cube.cube);
    });
  }

  std::vector<SampleEntry> kept;
  double snr_sum = 0.0;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    auto& e = m.samples[i];
    if (!failure[i].empty()) {
      m.shortfall.push_back(e.id + ": " + failure[i]);
      continue;
    }
    e.model_crc32 = io::file_crc32(out_dir / e.model_path);
    e.cube_crc32 = io::file_crc32(out_dir / e.cube_path);
    snr_sum += e.snr_db;
    kept.push_back(e);
  }
  m.samples = std::move(kept);
  if (noisy && !m.samples.empty()) m.mean_snr_db = snr_sum / static_cast<double>(m.samples.size());
  if (config.split.total() <= static_cast<int>(m.samples.size())) split(m, config.split, config.seed);
  save_manifest(m);
  return m;
}

// --- loading ------------------------------------------------------------------

/// Preprocessing applied on load.
struct LoadSpec {
  int time_steps = 1000;
  int receivers = 32;
  std::string receiver_mode = "uniform";
  std::uint64_t receiver_seed = 0;

  static LoadSpec paper() { return {}; }
  static LoadSpec toy() { return {400, 16, "uniform", 0}; }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LoadSpec, time_steps, receivers, receiver_mode, receiver_seed)

struct Sample {
  std::string id;
  std::string type;
  Tensor<float> cube;      // [S, T', k], per-gather normalized
  Tensor<float> velocity;  // [H, W], normalized to [0, 1]
  geo::LayeredModelSpec spec;
};

namespace detail {

template <class T>
Tensor<T> load_checked(const std::filesystem::path& path, const std::string& crc) {
  const auto bytes = io::read_file_bytes(path);
  const auto actual = io::crc32_hex(bytes.data(), bytes.size());
  if (actual != crc) throw DataError(path.string() + ": checksum mismatch (expected " + crc + ", found " + actual + ")");
  std::istringstream is(std::string(bytes.begin(), bytes.end()));
  try {
    return io::read_tensor<T>(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

/// truncate -> subsample -> normalize; the cube part of loading, exposed for `invert`.
inline Tensor<float> preprocess_cube(const Tensor<float>& raw, const LoadSpec& spec) {
  auto cube = truncate_time(raw, spec.time_steps);
  cube = subsample_receivers(cube, spec.receivers, spec.receiver_mode, spec.receiver_seed);
  return normalize_seismic(cube);
}

inline Sample load_sample(const DatasetManifest& m, const SampleEntry& e, const LoadSpec& spec) {
  Sample s;
  s.id = e.id;
  s.type = e.type;
  s.cube = preprocess_cube(detail::load_checked<float>(m.root / e.cube_path, e.cube_crc32), spec);
  s.velocity = normalize_velocity(detail::load_checked<float>(m.root / e.model_path, e.model_crc32), m.normalization);
  std::ifstream is(m.root / e.spec_path);
  if (!is) throw DataError("cannot open " + (m.root / e.spec_path).string());
  try {
    nlohmann::json::parse(is).get_to(s.spec);
  } catch (const nlohmann::json::exception& ex) {
    throw DataError((m.root / e.spec_path).string() + ": " + ex.what());
  }
  return s;
}

inline std::vector<Sample> load_split(const DatasetManifest& m, const std::string& name, const LoadSpec& spec) {
  std::vector<Sample> out;
  for (const auto* e : m.in_split(name)) out.push_back(load_sample(m, *e, spec));
  return out;
}

/// Re-hashes every referenced file; returns the ids that fail.
inline std::vector<std::string> verify_manifest(const DatasetManifest& m) {
  std::vector<std::string> bad;
  for (const auto& e : m.samples) {
    bool ok = std::filesystem::exists(m.root / e.model_path) && std::filesystem::exists(m.root / e.cube_path) &&
              std::filesystem::exists(m.root / e.spec_path);
    if (ok) ok = io::file_crc32(m.root / e.model_path) == e.model_crc32 && io::file_crc32(m.root / e.cube_path) == e.cube_crc32;
    if (!ok) bad.push_back(e.id);
  }
  return bad;
}

}  // namespace seisinv::data
