#pragma once

// Evaluation metrics on 2-D velocity grids ([H, W], double). All functions are pure.

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/core/tensor.hpp"
#include "seisinv/dataset.hpp"
#include "seisinv/geomodel.hpp"
#include "seisinv/objective.hpp"

namespace seisinv::metrics {

namespace detail {

inline void require_2d_pair(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
  if (a.rank() != 2 || a.dims() != b.dims())
    throw ShapeError(std::string(what) + ": expected two equal [H, W] grids, got " + shape_str(a.dims()) + " and " +
                     shape_str(b.dims()));
}

}  // namespace detail

struct PointwiseErrors {
  double mae = 0.0;
  double mse = 0.0;
};

inline PointwiseErrors pointwise_errors(const Tensor<double>& pred, const Tensor<double>& truth) {
  detail::require_2d_pair(pred, truth, "pointwise_errors");
  PointwiseErrors e;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    e.mae += std::abs(d);
    e.mse += d * d;
  }
  e.mae /= static_cast<double>(pred.size());
  e.mse /= static_cast<double>(pred.size());
  return e;
}

// --- edges and Soft F-beta --------------------------------------------------------

struct EdgeConfig {
  double threshold = 0.05;  // on normalized velocities
  int kernel = 7;           // odd; 1 disables smoothing
  double sigma = 1.5;
  double beta = 1.0;

  void validate() const {
    if (kernel < 1 || kernel % 2 == 0) throw DataError("edge kernel size must be odd and positive");
    if (!(threshold > 0) || !(sigma > 0) || !(beta > 0)) throw DataError("edge threshold, sigma and beta must be positive");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EdgeConfig, threshold, kernel, sigma, beta)

/// 1 where |V(r+1, c) - V(r, c)| > threshold, marked on the upper row r.
inline Tensor<double> detect_edges(const Tensor<double>& v, const EdgeConfig& cfg = {}) {
  if (v.rank() != 2) throw ShapeError("detect_edges expects [H, W], got " + shape_str(v.dims()));
  const std::size_t H = v.dim(0), W = v.dim(1);
  Tensor<double> e({H, W}, 0.0);
  for (std::size_t r = 0; r + 1 < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      if (std::abs(v(r + 1, c) - v(r, c)) > cfg.threshold) e(r, c) = 1.0;
  return e;
}

/// 1-D Gaussian taps with the centre tap equal to 1; the 2-D kernel is their outer product.
inline std::vector<double> peak_gaussian_taps(int size, double sigma) {
  std::vector<double> g(size);
  const int r = size / 2;
  for (int i = 0; i < size; ++i) g[i] = std::exp(-double((i - r) * (i - r)) / (2 * sigma * sigma));
  return g;
}

/// Zero-padded, same-size smoothing with the peak-normalized separable Gaussian.
inline Tensor<double> smooth_edges(const Tensor<double>& e, const EdgeConfig& cfg = {}) {
  const int H = static_cast<int>(e.dim(0)), W = static_cast<int>(e.dim(1)), r = cfg.kernel / 2;
  const auto g = peak_gaussian_taps(cfg.kernel, cfg.sigma);
  Tensor<double> tmp({e.dim(0), e.dim(1)}, 0.0), out({e.dim(0), e.dim(1)}, 0.0);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      double s = 0;
      for (int k = -r; k <= r; ++k)
        if (j + k >= 0 && j + k < W) s += g[k + r] * e(i, j + k);
      tmp(i, j) = s;
    }
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      double s = 0;
      for (int k = -r; k <= r; ++k)
        if (i + k >= 0 && i + k < H) s += g[k + r] * tmp(i + k, j);
      out(i, j) = s;
    }
  return out;
}

struct SoftFResult {
  double value = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool degenerate = false;  // an edge map was empty; value is 0
};

/// Predicted edges are smoothed, ground-truth edges are not.
inline SoftFResult soft_f_beta(const Tensor<double>& pred, const Tensor<double>& truth, const EdgeConfig& cfg = {}) {
  detail::require_2d_pair(pred, truth, "soft_f_beta");
  cfg.validate();
  const auto eb = detect_edges(pred, cfg), e = detect_edges(truth, cfg);
  double n_pred = 0, n_true = 0;
  for (double x : eb.values()) n_pred += x;
  for (double x : e.values()) n_true += x;
  SoftFResult r;
  if (n_pred == 0 || n_true == 0) {
    r.degenerate = true;
    return r;
  }
  const auto eh = smooth_edges(eb, cfg);
  double overlap = 0;
  for (std::size_t i = 0; i < e.size(); ++i) overlap += eh[i] * e[i];
  r.precision = overlap / n_pred;
  r.recall = overlap / n_true;
  const double b2 = cfg.beta * cfg.beta;
  const double den = b2 * r.precision + r.recall;
  r.value = den > 0 ? (1 + b2) * r.precision * r.recall / den : 0.0;
  return r;
}

// --- per-layer statistics --------------------------------------------------------

struct LayerStat {
  int layer = 0;  // 0 = top
  std::size_t cells = 0;
  double difference = 0.0;  // mean(pred) - mean(truth) in the region
  double variance = 0.0;    // population variance of pred in the region
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LayerStat, layer, cells, difference, variance)

/// Regions come from the truth's layer segmentation.
inline std::vector<LayerStat> layer_stats(const Tensor<double>& pred, const Tensor<double>& truth,
                                          const geo::LayeredModelSpec& spec) {
  detail::require_2d_pair(pred, truth, "layer_stats");
  if (spec.layer_velocities.empty()) throw DataError("layer_stats: truth has no layer specification");
  const auto labels = geo::layer_labels(spec, static_cast<int>(truth.dim(0)), static_cast<int>(truth.dim(1)));
  const int L = spec.interface_count + 1;
  std::vector<double> sp(L, 0), st(L, 0);
  std::vector<std::size_t> n(L, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sp[labels[i]] += pred[i];
    st[labels[i]] += truth[i];
    ++n[labels[i]];
  }
  std::vector<LayerStat> out(L);
  for (int l = 0; l < L; ++l) {
    out[l].layer = l;
    out[l].cells = n[l];
    if (!n[l]) continue;
    const double mp = sp[l] / n[l];
    out[l].difference = mp - st[l] / n[l];
    double v = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == l) v += (pred[i] - mp) * (pred[i] - mp);
    out[l].variance = v / n[l];
  }
  return out;
}

// --- reports -----------------------------------------------------------------------

struct SampleMetrics {
  std::string id;
  std::string type;
  double mae = 0, mse = 0, ssim = 0, mssim = 0, soft_f = 0;
  bool soft_f_degenerate = false;
  std::vector<LayerStat> layers;  // velocities in m/s
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SampleMetrics, id, type, mae, mse, ssim, mssim, soft_f, soft_f_degenerate, layers)

struct Aggregate {
  std::size_t count = 0;
  double mae = 0, mse = 0, ssim = 0, mssim = 0, soft_f = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Aggregate, count, mae, mse, ssim, mssim, soft_f)

/// Per type and layer, means over samples of the per-sample layer statistics.
struct LayerTableRow {
  std::string type;
  int layer = 0;
  std::size_t samples = 0;
  double difference = 0, variance = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LayerTableRow, type, layer, samples, difference, variance)

struct MetricsReport {
  std::string split;
  std::string checkpoint_hash;
  nlohmann::json config = nlohmann::json::object();
  std::vector<SampleMetrics> samples;
  Aggregate aggregate;
  std::vector<LayerTableRow> layer_table;

  /// Recomputes aggregate and layer_table from samples.
  void finalize() {
    aggregate = {};
    aggregate.count = samples.size();
    for (const auto& s : samples) {
      aggregate.mae += s.mae;
      aggregate.mse += s.mse;
      aggregate.ssim += s.ssim;
      aggregate.mssim += s.mssim;
      aggregate.soft_f += s.soft_f;
    }
    if (!samples.empty()) {
      const double n = static_cast<double>(samples.size());
      aggregate.mae /= n, aggregate.mse /= n, aggregate.ssim /= n, aggregate.mssim /= n, aggregate.soft_f /= n;
    }
    std::map<std::pair<std::string, int>, LayerTableRow> acc;
    for (const auto& s : samples)
      for (const auto& l : s.layers) {
        auto& row = acc[{s.type, l.layer}];
        row.type = s.type;
        row.layer = l.layer;
        ++row.samples;
        row.difference += l.difference;
        row.variance += l.variance;
      }
    layer_table.clear();
    for (auto& [k, row] : acc) {
      row.difference /= static_cast<double>(row.samples);
      row.variance /= static_cast<double>(row.samples);
      layer_table.push_back(row);
    }
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MetricsReport, split, checkpoint_hash, config, samples, aggregate, layer_table)

struct EvalConfig {
  obj::LossConfig ssim;  // window, stabilizers and scale weights
  EdgeConfig edges;
  data::NormalizationSpec normalization;  // for the m/s layer tables
  unsigned threads = 1;
};

/// All metrics for one normalized prediction.
inline SampleMetrics evaluate_one(const Tensor<double>& pred, const data::Sample& s, const EvalConfig& cfg = {}) {
  Tensor<double> truth({s.velocity.dim(0), s.velocity.dim(1)});
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = s.velocity[i];
  SampleMetrics m;
  m.id = s.id;
  m.type = s.type;
  const auto pe = pointwise_errors(pred, truth);
  m.mae = pe.mae;
  m.mse = pe.mse;
  m.ssim = obj::ssim_value(pred, truth, cfg.ssim);
  m.mssim = obj::mssim_value(pred, truth, cfg.ssim);
  const auto sf = soft_f_beta(pred, truth, cfg.edges);
  m.soft_f = sf.value;
  m.soft_f_degenerate = sf.degenerate;
  if (!s.spec.layer_velocities.empty())
    m.layers = layer_stats(data::denormalize_velocity(pred, cfg.normalization),
                           data::denormalize_velocity(truth, cfg.normalization), s.spec);
  return m;
}

/// Maps a batch of samples to normalized [H, W] predictions.
using Predictor = std::function<std::vector<Tensor<double>>(const std::vector<const data::Sample*>&)>;

inline MetricsReport evaluate_samples(const Predictor& predict, const std::vector<data::Sample>& samples,
                                      const EvalConfig& cfg = {}, std::size_t batch = 12) {
  if (samples.empty()) throw DataError("evaluate: empty split");
  MetricsReport rep;
  rep.samples.resize(samples.size());
  for (std::size_t b = 0; b < samples.size(); b += batch) {
    std::vector<const data::Sample*> chunk;
    for (std::size_t i = b; i < std::min(samples.size(), b + batch); ++i) chunk.push_back(&samples[i]);
    const auto preds = predict(chunk);
    if (preds.size() != chunk.size()) throw DataError("predictor returned the wrong number of outputs");
    data::detail::parallel_for(chunk.size(), cfg.threads,
                               [&](std::size_t i) { rep.samples[b + i] = evaluate_one(preds[i], *chunk[i], cfg); });
  }
  rep.finalize();
  return rep;
}

inline MetricsReport evaluate_split(const Predictor& predict, const data::DatasetManifest& m, const std::string& split,
                                    const data::LoadSpec& load, EvalConfig cfg = {}) {
  cfg.normalization = m.normalization;
  auto rep = evaluate_samples(predict, data::load_split(m, split, load), cfg);
  rep.split = split;
  return rep;
}

// --- export ------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw DataError("cannot write " + p.string());
  return os;
}

}  // namespace detail

inline void write_csv(const MetricsReport& r, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  using detail::fmt;
  os << "id,type,mae,mse,ssim,mssim,soft_f_beta,soft_f_degenerate\n";
  for (const auto& s : r.samples)
    os << s.id << ',' << s.type << ',' << fmt(s.mae) << ',' << fmt(s.mse) << ',' << fmt(s.ssim) << ',' << fmt(s.mssim)
       << ',' << fmt(s.soft_f) << ',' << int(s.soft_f_degenerate) << '\n';
  const auto& a = r.aggregate;
  os << "aggregate,," << fmt(a.mae) << ',' << fmt(a.mse) << ',' << fmt(a.ssim) << ',' << fmt(a.mssim) << ','
     << fmt(a.soft_f) << ",\n";
}

inline void write_layer_csv(const MetricsReport& r, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  os << "type,layer,samples,difference,variance\n";
  for (const auto& l : r.layer_table)
    os << l.type << ',' << l.layer << ',' << l.samples << ',' << detail::fmt(l.difference) << ','
       << detail::fmt(l.variance) << '\n';
}

inline void write_json(const MetricsReport& r, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  os << nlohmann::json(r).dump(1) << '\n';
}

inline MetricsReport read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open report " + path.string());
  try {
    return nlohmann::json::parse(is).get<MetricsReport>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// <stem>.csv, <stem>_layers.csv and <stem>.json under dir.
inline void export_report(const MetricsReport& r, const std::filesystem::path& dir, const std::string& stem) {
  write_csv(r, dir / (stem + ".csv"));
  write_layer_csv(r, dir / (stem + "_layers.csv"));
  write_json(r, dir / (stem + ".json"));
}

}  // namespace seisinv::metrics
