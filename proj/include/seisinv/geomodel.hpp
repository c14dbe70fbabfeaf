#pragma once

// Layered velocity-model synthesis, rasterization and recipe validation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seisinv/core/error.hpp"
#include "seisinv/core/random.hpp"
#include "seisinv/core/tensor.hpp"

namespace seisinv::geo {

inline constexpr double kMinVelocity = 1500.0;
inline constexpr double kMaxVelocity = 4000.0;
inline constexpr double kMinVelocityJump = 300.0;
inline constexpr int kTopExclusionRows = 10;
inline constexpr int kMinInterfaceSeparation = 6;
inline constexpr int kMaxInterfaces = 6;

struct GridExtent {
  int rows = 100;
  int cols = 100;
};

/// Vertical throw applied to every interface right of (and including) `column`.
struct Fault {
  int column = 0;
  int offset = 0;
};

struct LayeredModelSpec {
  int interface_count = 0;
  std::vector<double> layer_velocities;        // interface_count + 1 values, m/s, top to bottom
  std::vector<int> base_depths;                // mean depth of each interface, grid rows
  std::vector<std::vector<int>> undulations;   // [interface][column] offsets from base depth
  std::uint64_t seed = 0;
  int undulation_bound = 3;
  std::optional<Fault> fault;

  int columns() const { return undulations.empty() ? 0 : static_cast<int>(undulations.front().size()); }

  /// First row of the layer below interface `j` in column `col`.
  int depth(int j, int col) const {
    int d = base_depths[j] + undulations[j][col];
    if (fault && col >= fault->column) d += fault->offset;
    return d;
  }
};

struct VelocityModel {
  Tensor<float> values;  // [rows, cols], m/s
  double spacing = 10.0;
  std::optional<LayeredModelSpec> spec;

  int rows() const { return static_cast<int>(values.dim(0)); }
  int cols() const { return static_cast<int>(values.dim(1)); }
};

struct Violation {
  std::string kind;  // "velocity-range", "non-monotone", "velocity gap < 300", "top-ten-rows"
  int count = 0;
  int row = -1;  // first offending cell
  int col = -1;
  std::string message;
};

// --- JSON ------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const LayeredModelSpec& s) {
  j = nlohmann::json{{"interface_count", s.interface_count},
                     {"layer_velocities", s.layer_velocities},
                     {"base_depths", s.base_depths},
                     {"undulations", s.undulations},
                     {"seed", s.seed},
                     {"undulation_bound", s.undulation_bound}};
  if (s.fault) j["fault"] = {{"column", s.fault->column}, {"offset", s.fault->offset}};
}

inline void from_json(const nlohmann::json& j, LayeredModelSpec& s) {
  j.at("interface_count").get_to(s.interface_count);
  j.at("layer_velocities").get_to(s.layer_velocities);
  j.at("base_depths").get_to(s.base_depths);
  j.at("undulations").get_to(s.undulations);
  j.at("seed").get_to(s.seed);
  s.undulation_bound = j.value("undulation_bound", 3);
  s.fault.reset();
  if (j.contains("fault")) s.fault = Fault{j["fault"].at("column").get<int>(), j["fault"].at("offset").get<int>()};
}

// --- sampling ----------------------------------------------------------------

namespace detail {

/// Smoothed reflecting random walk in [-bound, bound], one value per column.
inline std::vector<int> undulation_profile(Rng& rng, int cols, int bound) {
  std::vector<int> out(cols, 0);
  if (bound == 0) return out;
  std::uniform_int_distribution<int> start(-bound, bound);
  std::uniform_int_distribution<int> step(-1, 1);
  std::vector<double> walk(cols);
  int x = start(rng);
  for (int c = 0; c < cols; ++c) {
    x += step(rng);
    if (x > bound) x = 2 * bound - x;
    if (x < -bound) x = -2 * bound - x;
    walk[c] = x;
  }
  constexpr int half = 2;
  for (int c = 0; c < cols; ++c) {
    double acc = 0;
    int n = 0;
    for (int k = std::max(0, c - half); k <= std::min(cols - 1, c + half); ++k, ++n) acc += walk[k];
    out[c] = std::clamp(static_cast<int>(std::lround(acc / n)), -bound, bound);
  }
  return out;
}

}  // namespace detail

/// Draws a random layered model: strictly increasing velocities with >= 300 m/s jumps,
/// non-crossing undulating interfaces kept below the top ten rows.
inline LayeredModelSpec sample_layer_spec(std::uint64_t seed, int interface_count, int undulation_bound,
                                          GridExtent grid = {}) {
  if (interface_count < 1 || interface_count > kMaxInterfaces)
    throw DataError("interface_count must be in 1.." + std::to_string(kMaxInterfaces) + ", got " +
                    std::to_string(interface_count));
  if (undulation_bound < 0) throw DataError("undulation_bound must be >= 0");
  const int n = interface_count;
  const int lo = std::max(12, kTopExclusionRows + undulation_bound);
  const int hi = grid.rows - std::max(8, undulation_bound + 1);
  const int gap = kMinInterfaceSeparation + 2 * undulation_bound;
  if (hi < lo || (n - 1) * gap > hi - lo)
    throw DataError("infeasible layer spec: " + std::to_string(n) + " interfaces with minimum separation " +
                    std::to_string(gap) + " rows do not fit between rows " + std::to_string(lo) + " and " +
                    std::to_string(hi));
  if (n * kMinVelocityJump > kMaxVelocity - kMinVelocity)
    throw DataError("infeasible layer spec: " + std::to_string(n + 1) + " layers cannot keep 300 m/s jumps in [1500, 4000]");

  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(undulation_bound),
                             static_cast<std::uint64_t>(grid.rows), static_cast<std::uint64_t>(grid.cols)}));
  LayeredModelSpec spec;
  spec.interface_count = n;
  spec.seed = seed;
  spec.undulation_bound = undulation_bound;

  std::uniform_int_distribution<int> vel(static_cast<int>(kMinVelocity), static_cast<int>(kMaxVelocity));
  for (;;) {
    std::vector<double> v(n + 1);
    for (auto& x : v) x = vel(rng);
    std::sort(v.begin(), v.end());
    bool ok = true;
    for (int i = 1; i <= n; ++i) ok = ok && (v[i] - v[i - 1] >= kMinVelocityJump);
    if (ok) {
      spec.layer_velocities = std::move(v);
      break;
    }
  }

  std::uniform_int_distribution<int> depth(lo, hi);
  for (;;) {
    std::vector<int> d(n);
    for (auto& x : d) x = depth(rng);
    std::sort(d.begin(), d.end());
    bool ok = true;
    for (int i = 1; i < n; ++i) ok = ok && (d[i] - d[i - 1] >= gap);
    if (ok) {
      spec.base_depths = std::move(d);
      break;
    }
  }

  spec.undulations.reserve(n);
  for (int j = 0; j < n; ++j) spec.undulations.push_back(detail::undulation_profile(rng, grid.cols, undulation_bound));
  return spec;
}

/// Adds a single vertical throw right of a random column, keeping every recipe constraint.
inline void add_fault(LayeredModelSpec& spec, std::uint64_t seed, int rows) {
  Rng rng(derive_seed(seed, {0xfa017ULL}));
  const int cols = spec.columns();
  std::uniform_int_distribution<int> col(cols / 5, cols - cols / 5);
  std::uniform_int_distribution<int> mag(3, 8);
  int shallowest = rows, deepest = 0;
  for (int c = 0; c < cols; ++c) {
    shallowest = std::min(shallowest, spec.depth(0, c));
    deepest = std::max(deepest, spec.depth(spec.interface_count - 1, c));
  }
  const int up_room = shallowest - kTopExclusionRows;
  const int down_room = rows - 1 - deepest;
  const int m = mag(rng);
  int offset = (rng() & 1U) ? m : -m;
  if (offset < 0 && -offset > up_room) offset = std::min(m, down_room);
  if (offset > 0 && offset > down_room) offset = -std::min(m, up_room);
  spec.fault = Fault{col(rng), offset};
}

/// Per-cell layer index (0 = top layer).
inline Tensor<int> layer_labels(const LayeredModelSpec& spec, int rows, int cols) {
  if (spec.columns() != cols)
    throw DataError("spec has " + std::to_string(spec.columns()) + " columns, grid has " + std::to_string(cols));
  Tensor<int> labels({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
  for (int c = 0; c < cols; ++c) {
    for (int j = 0; j < spec.interface_count; ++j) {
      const int d = spec.depth(j, c);
      if (d < 0 || d >= rows)
        throw DataError("interface " + std::to_string(j) + " depth " + std::to_string(d) + " at column " +
                        std::to_string(c) + " lies outside " + std::to_string(rows) + " rows");
    }
    for (int r = 0; r < rows; ++r) {
      int layer = 0;
      for (int j = 0; j < spec.interface_count; ++j) layer += (r >= spec.depth(j, c));
      labels(r, c) = layer;
    }
  }
  return labels;
}

inline VelocityModel rasterize(const LayeredModelSpec& spec, int rows, int cols, double spacing = 10.0) {
  const auto labels = layer_labels(spec, rows, cols);
  VelocityModel m;
  m.values = Tensor<float>({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
  for (std::size_t i = 0; i < labels.size(); ++i)
    m.values[i] = static_cast<float>(spec.layer_velocities[labels[i]]);
  m.spacing = spacing;
  m.spec = spec;
  return m;
}

/// Rows at which the velocity changes going down column `col` (the first row of each new layer).
inline std::vector<int> column_interfaces(const VelocityModel& m, int col) {
  std::vector<int> out;
  for (int r = 1; r < m.rows(); ++r)
    if (m.values(r, col) != m.values(r - 1, col)) out.push_back(r);
  return out;
}

inline std::vector<Violation> validate(const VelocityModel& m) {
  std::vector<Violation> out;
  auto note = [&](const std::string& kind, int r, int c, const std::string& msg) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Violation& v) { return v.kind == kind; });
    if (it == out.end()) {
      out.push_back(Violation{kind, 1, r, c, msg});
    } else {
      ++it->count;
    }
  };
  const int rows = m.rows(), cols = m.cols();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = m.values(r, c);
      if (!(v >= kMinVelocity - 1e-6 && v <= kMaxVelocity + 1e-6))
        note("velocity-range", r, c, "velocity " + std::to_string(v) + " outside [1500, 4000] m/s");
      if (r == 0) continue;
      const double dv = v - m.values(r - 1, c);
      if (dv == 0.0) continue;
      if (dv < 0.0) {
        note("non-monotone", r, c, "velocity decreases with depth");
      } else if (dv < kMinVelocityJump - 1e-6) {
        note("velocity gap < 300", r, c, "velocity jump of " + std::to_string(dv) + " m/s");
      }
      if (r < kTopExclusionRows) note("top-ten-rows", r, c, "interface at row " + std::to_string(r));
    }
  }
  return out;
}

struct StatsReport {
  std::vector<double> depth_mean;   // per row, m/s
  std::vector<double> depth_std;    // per row, population std over models and columns
  std::vector<double> hist_edges;   // bin edges, m/s
  std::vector<double> hist_fraction;  // fraction of cells per bin
  Tensor<double> interface_map;     // [rows, cols], fraction of models with an interface at the cell
};

inline StatsReport dataset_statistics(const std::vector<VelocityModel>& models, int bins = 25) {
  if (models.empty()) throw DataError("dataset_statistics needs at least one model");
  const int rows = models.front().rows(), cols = models.front().cols();
  StatsReport rep;
  rep.depth_mean.assign(rows, 0.0);
  rep.depth_std.assign(rows, 0.0);
  rep.hist_fraction.assign(bins, 0.0);
  for (int b = 0; b <= bins; ++b) rep.hist_edges.push_back(kMinVelocity + (kMaxVelocity - kMinVelocity) * b / bins);
  rep.interface_map = Tensor<double>({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
  const double n_models = static_cast<double>(models.size());
  for (const auto& m : models) {
    if (m.rows() != rows || m.cols() != cols) throw ShapeError("dataset_statistics: models differ in shape");
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double v = m.values(r, c);
        rep.depth_mean[r] += v;
        int b = static_cast<int>((v - kMinVelocity) / (kMaxVelocity - kMinVelocity) * bins);
        rep.hist_fraction[std::clamp(b, 0, bins - 1)] += 1.0;
        if (r > 0 && v != m.values(r - 1, c)) rep.interface_map(r, c) += 1.0 / n_models;
      }
    }
  }
  const double per_row = n_models * cols;
  for (auto& x : rep.depth_mean) x /= per_row;
  for (const auto& m : models)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const double d = m.values(r, c) - rep.depth_mean[r];
        rep.depth_std[r] += d * d;
      }
  for (auto& x : rep.depth_std) x = std::sqrt(x / per_row);
  for (auto& x : rep.hist_fraction) x /= per_row * rows;
  return rep;
}

}  // namespace seisinv::geo
