#pragma once

// Training loop, checkpoint lifecycle and the experiment drivers built on it.
//
// Run directory:
//   config.json  runlog.csv  runlog.json  checkpoints/{best,final}.sinvckpt
//   reports/*.csv|json  figures/*.png

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/core/random.hpp"
#include "seisinv/core/sinv_io.hpp"
#include "seisinv/dataset.hpp"
#include "seisinv/diffcore.hpp"
#include "seisinv/metrics.hpp"
#include "seisinv/objective.hpp"
#include "seisinv/render.hpp"
#include "seisinv/seisinvnet.hpp"

namespace seisinv::harness {

namespace fs = std::filesystem;

/// SEISINV_DETERMINISTIC=1 pins evaluation to one thread.
inline bool deterministic_mode() {
  const char* v = std::getenv("SEISINV_DETERMINISTIC");
  return v && std::string(v) == "1";
}

inline unsigned eval_threads() {
  return deterministic_mode() ? 1U : std::max(1U, std::thread::hardware_concurrency());
}

// --- configuration -------------------------------------------------------------

struct TrainConfig {
  std::string variant;               // alpha..eta, informational
  std::string model = "seisinvnet";  // seisinvnet | baseline
  std::string profile = "paper";     // network size: paper | toy | mini
  obj::LossKind loss = obj::LossKind::L2Mssim;
  std::size_t batch = 12;
  double lr = 5e-5;
  std::string schedule = "poly";  // poly | step
  double poly_power = 0.9;
  int epochs = 200;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  std::string manifest;  // dataset directory
  data::LoadSpec load;
  int max_train_samples = 0;   // 0 = whole split
  int max_iterations = 0;      // 0 = epochs * batches per epoch
  double stop_l2 = 0.0;        // > 0: stop once a batch's squared-error term reaches it
  std::string init_checkpoint;  // start from these weights (fresh optimizer)

  void validate() const {
    if (model != "seisinvnet" && model != "baseline") throw DataError("unknown model '" + model + "'");
    if (profile != "paper" && profile != "toy" && profile != "mini") throw DataError("unknown profile '" + profile + "'");
    if (batch < 2) throw DataError("batch size must be >= 2 (batch norm), got " + std::to_string(batch));
    if (epochs < 1) throw DataError("epochs must be >= 1");
    if (!(lr > 0)) throw DataError("learning rate must be positive");
    if (schedule != "poly" && schedule != "step") throw DataError("unknown schedule '" + schedule + "'");
    if (!(dropout >= 0 && dropout < 1)) throw DataError("dropout must lie in [0, 1)");
  }

  /// Greek-letter variants. The paper profile follows the published settings; the
  /// toy profile keeps the loss/model pairing but uses the desk-scale budget.
  static TrainConfig variant_config(const std::string& name, const std::string& profile = "paper") {
    TrainConfig c;
    c.variant = name;
    c.profile = profile;
    if (name == "alpha") c.model = "baseline", c.loss = obj::LossKind::L1, c.schedule = "step";
    else if (name == "beta") c.model = "baseline", c.loss = obj::LossKind::L1;
    else if (name == "gamma") c.model = "seisinvnet", c.loss = obj::LossKind::L1;
    else if (name == "delta") c.model = "baseline", c.loss = obj::LossKind::L2;
    else if (name == "epsilon") c.model = "seisinvnet", c.loss = obj::LossKind::L2;
    else if (name == "zeta") c.model = "baseline", c.loss = obj::LossKind::L2Mssim;
    else if (name == "eta") c.model = "seisinvnet", c.loss = obj::LossKind::L2Mssim;
    else throw UsageError("unknown variant '" + name + "' (expected alpha..eta)");
    if (profile == "paper") {
      c.lr = name == "alpha" ? 5e-4 : 5e-5;
      c.load = data::LoadSpec::paper();
    } else if (profile == "toy") {
      c.epochs = 30;
      c.lr = name == "alpha" ? 2e-2 : 2e-3;
      c.load = data::LoadSpec::toy();
    } else {
      throw UsageError("variants are defined for the paper and toy profiles");
    }
    return c;
  }

  static std::vector<std::string> variant_names() { return {"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta"}; }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, variant, model, profile, loss, batch, lr, schedule, poly_power, epochs,
                                   dropout, seed, manifest, load, max_train_samples, max_iterations, stop_l2,
                                   init_checkpoint)

inline std::string config_hash(const TrainConfig& c) { return io::crc32_hex(nlohmann::json(c).dump()); }

inline std::unique_ptr<net::Network<float>> build_network(const TrainConfig& c) {
  c.validate();
  const auto seed = derive_seed(c.seed, {0x6e6574ULL});
  if (c.model == "seisinvnet") {
    auto cfg = c.profile == "paper" ? net::SeisInvNetConfig::paper()
               : c.profile == "toy" ? net::SeisInvNetConfig::toy()
                                    : net::SeisInvNetConfig::mini();
    cfg.dropout = c.dropout;
    return std::make_unique<net::SeisInvNet<float>>(cfg, seed);
  }
  auto cfg = c.profile == "paper" ? net::BaselineConfig::paper()
             : c.profile == "toy" ? net::BaselineConfig::toy()
                                  : net::BaselineConfig::mini();
  cfg.dropout = c.dropout;
  return std::make_unique<net::Baseline<float>>(cfg, seed);
}

// --- batches and prediction ------------------------------------------------------

struct Batch {
  Tensor<float> cubes;    // [N, S, T, R]
  Tensor<float> targets;  // [N, 1, H, W]
};

inline Batch make_batch(const std::vector<const data::Sample*>& items) {
  if (items.empty()) throw DataError("empty batch");
  const auto& c0 = items[0]->cube.dims();
  const auto& v0 = items[0]->velocity.dims();
  Batch b{Tensor<float>({items.size(), c0[0], c0[1], c0[2]}), Tensor<float>({items.size(), 1, v0[0], v0[1]})};
  const std::size_t cn = shape_size(c0), vn = shape_size(v0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->cube.dims() != c0 || items[i]->velocity.dims() != v0)
      throw ShapeError("sample " + items[i]->id + " has cube " + shape_str(items[i]->cube.dims()) + ", expected " +
                       shape_str(c0));
    std::copy_n(items[i]->cube.data(), cn, b.cubes.data() + i * cn);
    std::copy_n(items[i]->velocity.data(), vn, b.targets.data() + i * vn);
  }
  return b;
}

inline void check_geometry(const net::Network<float>& n, const data::Sample& s) {
  if (s.cube.dims() != n.input_dims() || s.velocity.dims() != n.output_dims())
    throw ShapeError("sample " + s.id + ": cube " + shape_str(s.cube.dims()) + " / model " +
                     shape_str(s.velocity.dims()) + " do not match network input " + shape_str(n.input_dims()) +
                     " / output " + shape_str(n.output_dims()));
}

/// Per-sample [N, S*R] trace masks; empty function = keep everything.
using MaskFn = std::function<Tensor<float>(const std::vector<const data::Sample*>&)>;

/// Eval-mode predictions as normalized [H, W] grids.
inline metrics::Predictor network_predictor(net::Network<float>& n, MaskFn mask = {}) {
  return [&n, mask](const std::vector<const data::Sample*>& items) {
    auto b = make_batch(items);
    ad::Tape<float> tape;
    std::optional<Tensor<float>> keep;
    if (mask) keep = mask(items);
    net::ForwardOptions o;
    o.trace_keep = keep ? &*keep : nullptr;
    const auto y = n.forward(tape, b.cubes, o).value();
    const std::size_t H = y.dim(2), W = y.dim(3);
    std::vector<Tensor<double>> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
      Tensor<double> t({H, W});
      for (std::size_t k = 0; k < H * W; ++k) t[k] = y[i * H * W + k];
      out.push_back(std::move(t));
    }
    return out;
  };
}

// --- run log ---------------------------------------------------------------------

struct IterRecord {
  std::uint64_t iteration = 0;
  int epoch = 0;
  double lr = 0, loss = 0, l2 = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(IterRecord, iteration, epoch, lr, loss, l2)

struct EpochRecord {
  int epoch = 0;
  std::uint64_t iteration = 0;  // iterations completed
  metrics::Aggregate valid;
  double wall_s = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EpochRecord, epoch, iteration, valid, wall_s)

struct RunLog {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<IterRecord> iters;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_mssim = -std::numeric_limits<double>::infinity();
  double wall_s = 0;
  bool stopped_early = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunLog, seed, config_hash, iters, epochs, best_epoch, best_mssim, wall_s,
                                   stopped_early)

/// Iterations and validation records in one table (no wall-clock, so it is reproducible).
inline void write_runlog_csv(const RunLog& log, const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << std::setprecision(17);
  os << "record,iteration,epoch,lr,loss,l2,valid_mae,valid_mse,valid_ssim,valid_mssim,valid_soft_f\n";
  std::size_t e = 0;
  for (std::size_t i = 0; i <= log.iters.size(); ++i) {
    for (; e < log.epochs.size() && log.epochs[e].iteration == i; ++e) {
      const auto& v = log.epochs[e].valid;
      os << "valid," << i << ',' << log.epochs[e].epoch << ",,,," << v.mae << ',' << v.mse << ',' << v.ssim << ','
         << v.mssim << ',' << v.soft_f << '\n';
    }
    if (i == log.iters.size()) break;
    const auto& r = log.iters[i];
    os << "iter," << r.iteration << ',' << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.l2 << ",,,,,\n";
  }
}

// --- training --------------------------------------------------------------------

struct TrainData {
  std::vector<data::Sample> train;
  std::vector<data::Sample> valid;
};

inline TrainData load_train_data(const TrainConfig& c) {
  if (c.manifest.empty()) throw DataError("training needs a dataset manifest");
  const auto m = data::load_manifest(c.manifest);
  TrainData d{data::load_split(m, "train", c.load), data::load_split(m, "valid", c.load)};
  if (d.train.empty()) throw DataError(c.manifest + ": train split is empty");
  if (d.valid.empty()) throw DataError(c.manifest + ": valid split is empty");
  return d;
}

struct TrainResult {
  fs::path run_dir;
  fs::path best;
  fs::path final;
  RunLog log;
};

struct TrainHooks {
  std::ostream* progress = nullptr;  // one line per epoch
  std::function<void(const IterRecord&)> on_iteration;
};

inline double scheduled_lr(const TrainConfig& c, std::uint64_t iteration, std::uint64_t total, int epoch) {
  return c.schedule == "step" ? ad::step_lr(epoch, c.lr)
                              : ad::poly_lr(iteration, total, c.lr, c.poly_power);
}

inline nlohmann::json checkpoint_extra(const net::Network<float>& n, const TrainConfig& c) {
  return {{"network", net::describe(n)}, {"load", c.load}, {"train", c}};
}

inline metrics::EvalConfig default_eval_config() {
  metrics::EvalConfig e;
  e.threads = eval_threads();
  return e;
}

/// Trains on preloaded samples. Batches are drawn from a per-epoch seeded permutation;
/// the last batch of an epoch wraps around to the start of the permutation so every
/// batch holds `c.batch` samples (batch norm needs at least two).
inline TrainResult train(const TrainConfig& c, const TrainData& d, const fs::path& run_dir,
                         const TrainHooks& hooks = {}) {
  c.validate();
  if (d.train.empty() || d.valid.empty()) throw DataError("training needs non-empty train and valid sets");
  auto network = build_network(c);
  auto& n = *network;
  for (const auto& s : d.train) check_geometry(n, s);
  for (const auto& s : d.valid) check_geometry(n, s);
  if (!c.init_checkpoint.empty()) ad::load_checkpoint(c.init_checkpoint, n.params());

  fs::create_directories(run_dir / "checkpoints");
  fs::create_directories(run_dir / "reports");
  fs::create_directories(run_dir / "figures");
  {
    std::ofstream os(run_dir / "config.json", std::ios::trunc);
    os << nlohmann::json{{"train", c}, {"network", net::describe(n)}}.dump(1) << '\n';
  }

  std::vector<const data::Sample*> pool;
  const std::size_t n_train = c.max_train_samples > 0 ? std::min<std::size_t>(c.max_train_samples, d.train.size())
                                                      : d.train.size();
  for (std::size_t i = 0; i < n_train; ++i) pool.push_back(&d.train[i]);
  const std::size_t per_epoch = (pool.size() + c.batch - 1) / c.batch;
  std::uint64_t total = static_cast<std::uint64_t>(per_epoch) * c.epochs;
  if (c.max_iterations > 0) total = std::min<std::uint64_t>(total, c.max_iterations);

  ad::Adam<float> adam(n.params().trainable(), {});
  obj::LossConfig lcfg;
  lcfg.kind = c.loss;
  auto ecfg = default_eval_config();

  TrainResult res;
  res.run_dir = run_dir;
  res.best = run_dir / "checkpoints" / "best.sinvckpt";
  res.final = run_dir / "checkpoints" / "final.sinvckpt";
  auto& log = res.log;
  log.seed = c.seed;
  log.config_hash = config_hash(c);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  std::uint64_t it = 0;
  bool stop = false;
  for (int epoch = 0; epoch < c.epochs && !stop; ++epoch) {
    std::vector<std::size_t> perm(pool.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuf(derive_seed(c.seed, {0x5f1ULL, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(perm[i - 1], perm[pick(shuf)]);
    }
    for (std::size_t b = 0; b < per_epoch && !stop; ++b) {
      std::vector<const data::Sample*> items;
      for (std::size_t j = 0; j < c.batch; ++j) items.push_back(pool[perm[(b * c.batch + j) % perm.size()]]);
      const auto batch = make_batch(items);
      const double lr = scheduled_lr(c, it, total, epoch);

      ad::Tape<float> tape;
      Rng drop(derive_seed(c.seed, {0xd70ULL, it}));
      net::ForwardOptions o;
      o.training = true;
      o.rng = &drop;
      auto y = n.forward(tape, batch.cubes, o);
      auto loss = obj::training_loss(y, tape.constant(batch.targets), lcfg);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        std::string ids;
        for (const auto* s : items) ids += (ids.empty() ? "" : ",") + s->id;
        throw NumericalError("non-finite loss at iteration " + std::to_string(it) + " (epoch " +
                             std::to_string(epoch) + "), batch [" + ids + "]");
      }
      double l2 = 0;
      const auto& yv = y.value();
      for (std::size_t k = 0; k < yv.size(); ++k) l2 += (yv[k] - batch.targets[k]) * (yv[k] - batch.targets[k]);
      l2 /= static_cast<double>(yv.size());

      n.params().zero_grad();
      tape.backward(loss);
      adam.step(lr);

      IterRecord rec{it, epoch, lr, lv, l2};
      log.iters.push_back(rec);
      if (hooks.on_iteration) hooks.on_iteration(rec);
      ++it;
      if (c.stop_l2 > 0 && l2 <= c.stop_l2) stop = log.stopped_early = true;
      if (it >= total) stop = true;
    }

    auto rep = metrics::evaluate_samples(network_predictor(n), d.valid, ecfg);
    log.epochs.push_back({epoch, it, rep.aggregate, elapsed()});
    if (rep.aggregate.mssim > log.best_mssim) {
      log.best_mssim = rep.aggregate.mssim;
      log.best_epoch = epoch;
      auto extra = checkpoint_extra(n, c);
      extra["epoch"] = epoch;
      extra["valid_mssim"] = rep.aggregate.mssim;
      ad::save_checkpoint(res.best, n.params(), {it, log.config_hash, extra});
    }
    if (hooks.progress) {
      double mean_loss = 0;
      std::size_t k = 0;
      for (auto r = log.iters.rbegin(); r != log.iters.rend() && r->epoch == epoch; ++r, ++k) mean_loss += r->loss;
      *hooks.progress << "epoch " << epoch + 1 << "/" << c.epochs << " loss " << (k ? mean_loss / k : 0.0)
                      << " valid mse " << rep.aggregate.mse << " mssim " << rep.aggregate.mssim << " ("
                      << std::fixed << std::setprecision(1) << elapsed() << " s)" << std::defaultfloat
                      << std::setprecision(6) << std::endl;
    }
  }

  auto extra = checkpoint_extra(n, c);
  extra["epoch"] = log.epochs.empty() ? -1 : log.epochs.back().epoch;
  ad::save_checkpoint(res.final, n.params(), {it, log.config_hash, extra}, &adam);
  log.wall_s = elapsed();
  write_runlog_csv(log, run_dir / "runlog.csv");
  std::ofstream(run_dir / "runlog.json", std::ios::trunc) << nlohmann::json(log).dump(1) << '\n';
  return res;
}

inline TrainResult train(const TrainConfig& c, const fs::path& run_dir, const TrainHooks& hooks = {}) {
  return train(c, load_train_data(c), run_dir, hooks);
}

// --- checkpoints as models ---------------------------------------------------------

struct LoadedModel {
  std::unique_ptr<net::Network<float>> net;
  data::LoadSpec load;
  ad::CheckpointInfo info;
  std::string file_hash;
};

inline LoadedModel load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
  LoadedModel m;
  m.info = ad::read_checkpoint_info(checkpoint);
  if (!m.info.extra.contains("network")) throw DataError(checkpoint.string() + ": no network description");
  m.net = net::make_network<float>(m.info.extra.at("network"), 0);
  m.load = m.info.extra.value("load", data::LoadSpec{});
  ad::load_checkpoint(checkpoint, m.net->params());
  m.file_hash = io::file_crc32(checkpoint);
  return m;
}

inline metrics::MetricsReport evaluate(LoadedModel& m, const std::vector<data::Sample>& samples,
                                       const std::string& split, MaskFn mask = {}) {
  for (const auto& s : samples) check_geometry(*m.net, s);
  auto rep = metrics::evaluate_samples(network_predictor(*m.net, std::move(mask)), samples, default_eval_config());
  rep.split = split;
  rep.checkpoint_hash = m.file_hash;
  rep.config = m.info.extra.value("train", nlohmann::json::object());
  return rep;
}

inline metrics::MetricsReport evaluate(const fs::path& checkpoint, const fs::path& manifest, const std::string& split) {
  auto m = load_model(checkpoint);
  const auto man = data::load_manifest(manifest);
  const auto samples = data::load_split(man, split, m.load);
  if (samples.empty()) throw DataError(manifest.string() + ": split '" + split + "' is empty");
  return evaluate(m, samples, split);
}

/// Table-I layout: one row per metric, one column per variant.
inline void write_variant_table(const std::vector<std::pair<std::string, metrics::MetricsReport>>& cols,
                                const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << std::setprecision(10) << "metric";
  for (const auto& [name, r] : cols) os << ',' << name;
  os << '\n';
  const std::vector<std::pair<std::string, double metrics::Aggregate::*>> rows{
      {"mae", &metrics::Aggregate::mae},     {"mse", &metrics::Aggregate::mse},
      {"ssim", &metrics::Aggregate::ssim},   {"mssim", &metrics::Aggregate::mssim},
      {"soft_f_beta", &metrics::Aggregate::soft_f}};
  for (const auto& [label, field] : rows) {
    os << label;
    for (const auto& [name, r] : cols) os << ',' << r.aggregate.*field;
    os << '\n';
  }
}

// --- feature maps ------------------------------------------------------------------

struct FeatureMapReport {
  std::size_t source = 0;
  std::size_t group_size = 8;
  std::size_t samples = 0;
  std::vector<std::pair<int, int>> receivers;  // 1-based inclusive range per group
  std::vector<Tensor<double>> groups;          // [h, w] means over samples and group members
  std::vector<double> centroids;               // horizontal activation centroid, map columns
};

/// Column centroid of |group - mean over groups|: where a group's maps differ from
/// the shared background. Returns the middle column when there is no difference.
inline double horizontal_centroid(const Tensor<double>& group, const Tensor<double>& background) {
  const std::size_t h = group.dim(0), w = group.dim(1);
  double num = 0, den = 0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col) {
      const double a = std::abs(group(r, col) - background(r, col));
      num += a * static_cast<double>(col);
      den += a;
    }
  return den > 0 ? num / den : (static_cast<double>(w) - 1) / 2;
}

inline FeatureMapReport featuremap_report(net::Network<float>& n, const std::vector<data::Sample>& samples,
                                          std::size_t source, std::size_t group_size = 8) {
  if (n.kind() != "seisinvnet") throw UsageError("feature maps exist only for seisinvnet checkpoints");
  if (samples.empty()) throw DataError("featuremap_report: no samples");
  const auto in = n.input_dims();
  const std::size_t S = in[0], R = in[2];
  if (source >= S) throw DataError("source index " + std::to_string(source) + " out of range (S = " + std::to_string(S) + ")");
  if (group_size < 1 || R % group_size != 0)
    throw DataError("group size " + std::to_string(group_size) + " must divide R = " + std::to_string(R));
  FeatureMapReport rep;
  rep.source = source;
  rep.group_size = group_size;
  rep.samples = samples.size();
  const std::size_t G = R / group_size;
  std::size_t h = 0, w = 0;
  for (std::size_t b = 0; b < samples.size(); b += 12) {
    std::vector<const data::Sample*> items;
    for (std::size_t i = b; i < std::min(samples.size(), b + 12); ++i) {
      check_geometry(n, samples[i]);
      items.push_back(&samples[i]);
    }
    auto batch = make_batch(items);
    ad::Tape<float> tape;
    net::ForwardTrace<float> tr;
    n.forward(tape, batch.cubes, {}, &tr);
    const auto& fm = tr.feature_maps;  // [N, S*R, h, w]
    if (rep.groups.empty()) {
      h = fm.dim(2), w = fm.dim(3);
      rep.groups.assign(G, Tensor<double>({h, w}, 0.0));
    }
    for (std::size_t i = 0; i < items.size(); ++i)
      for (std::size_t r = 0; r < R; ++r) {
        const float* m = fm.data() + ((i * S + source) * R + r) * h * w;
        auto& g = rep.groups[r / group_size];
        for (std::size_t k = 0; k < h * w; ++k) g[k] += m[k];
      }
  }
  const double scale = 1.0 / static_cast<double>(samples.size() * group_size);
  Tensor<double> bg({h, w}, 0.0);
  for (auto& g : rep.groups) {
    for (auto& v : g.storage()) v *= scale;
    for (std::size_t k = 0; k < h * w; ++k) bg[k] += g[k] / static_cast<double>(G);
  }
  for (std::size_t gi = 0; gi < G; ++gi) {
    rep.receivers.push_back({static_cast<int>(gi * group_size + 1), static_cast<int>((gi + 1) * group_size)});
    rep.centroids.push_back(horizontal_centroid(rep.groups[gi], bg));
  }
  return rep;
}

/// One PNG per group plus a side-by-side panel, on a shared value range; a JSON summary.
inline void write_featuremap_report(const FeatureMapReport& r, const fs::path& figures, const fs::path& reports,
                                    int scale = 8) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& g : r.groups)
    for (double v : g.values()) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) hi = lo + 1;
  std::vector<render::Image> panels;
  for (std::size_t i = 0; i < r.groups.size(); ++i) {
    panels.push_back(render::colorize(r.groups[i], lo, hi, scale));
    render::write_png(panels.back(), figures / ("featuremaps_s" + std::to_string(r.source) + "_r" +
                                                std::to_string(r.receivers[i].first) + "-" +
                                                std::to_string(r.receivers[i].second) + ".png"));
  }
  render::write_png(render::hstack(panels, 4), figures / ("featuremaps_s" + std::to_string(r.source) + ".png"));
  nlohmann::json j{{"source", r.source},     {"group_size", r.group_size}, {"samples", r.samples},
                   {"receivers", r.receivers}, {"centroids", r.centroids}, {"value_range", {lo, hi}}};
  fs::create_directories(reports);
  std::ofstream(reports / ("featuremaps_s" + std::to_string(r.source) + ".json"), std::ios::trunc) << j.dump(1) << '\n';
}

// --- receiver dropout --------------------------------------------------------------

struct DropoutEntry {
  int keep = 0;
  std::vector<std::vector<int>> retained;  // per sample, 0-based receiver indices
  metrics::MetricsReport report;
};

/// For each keep count, every sample keeps a seeded random subset of receivers; the
/// other receivers' feature maps (input traces for the baseline) are zeroed.
inline std::vector<DropoutEntry> receiver_dropout_eval(LoadedModel& m, const std::vector<data::Sample>& samples,
                                                       const std::vector<int>& keep_counts, std::uint64_t seed,
                                                       const std::string& split = "test") {
  const auto in = m.net->input_dims();
  const int S = static_cast<int>(in[0]), R = static_cast<int>(in[2]);
  std::vector<DropoutEntry> out;
  for (int k : keep_counts) {
    if (k < 1 || k > R)
      throw DataError("keep count " + std::to_string(k) + " outside 1.." + std::to_string(R) + " (trained receivers)");
    DropoutEntry e;
    e.keep = k;
    std::map<const data::Sample*, std::vector<int>> chosen;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto idx = data::random_receiver_indices(R, k, derive_seed(seed, {static_cast<std::uint64_t>(k), i}));
      chosen[&samples[i]] = idx;
      e.retained.push_back(std::move(idx));
    }
    MaskFn mask = [&chosen, S, R](const std::vector<const data::Sample*>& items) {
      Tensor<float> keep({items.size(), static_cast<std::size_t>(S * R)}, 0.0f);
      for (std::size_t i = 0; i < items.size(); ++i)
        for (int s = 0; s < S; ++s)
          for (int r : chosen.at(items[i])) keep(i, static_cast<std::size_t>(s * R + r)) = 1.0f;
      return keep;
    };
    e.report = evaluate(m, samples, split, mask);
    out.push_back(std::move(e));
  }
  return out;
}

// --- fine-tuning -------------------------------------------------------------------

struct FinetuneResult {
  TrainResult run;
  metrics::MetricsReport old_before, old_after, new_before, new_after;
};

/// Continues training from `checkpoint` on the new domain and reports both domains
/// before and after (using the fine-tuned run's best checkpoint).
inline FinetuneResult finetune(const fs::path& checkpoint, TrainConfig c, const TrainData& new_data,
                               const std::vector<data::Sample>& old_eval, const std::vector<data::Sample>& new_eval,
                               const fs::path& run_dir, const TrainHooks& hooks = {}) {
  FinetuneResult r;
  {
    auto before = load_model(checkpoint);
    r.old_before = evaluate(before, old_eval, "old");
    r.new_before = evaluate(before, new_eval, "new");
  }
  c.init_checkpoint = checkpoint.string();
  r.run = train(c, new_data, run_dir, hooks);
  auto after = load_model(r.run.best);
  r.old_after = evaluate(after, old_eval, "old");
  r.new_after = evaluate(after, new_eval, "new");
  metrics::export_report(r.old_before, run_dir / "reports", "old_before");
  metrics::export_report(r.old_after, run_dir / "reports", "old_after");
  metrics::export_report(r.new_before, run_dir / "reports", "new_before");
  metrics::export_report(r.new_after, run_dir / "reports", "new_after");
  return r;
}

/// Training config for fine-tuning a checkpoint: its own config with a new epoch budget.
inline TrainConfig finetune_config(const fs::path& checkpoint, int epochs = 40) {
  const auto info = ad::read_checkpoint_info(checkpoint);
  auto c = info.extra.value("train", TrainConfig{});
  c.epochs = epochs;
  c.max_iterations = 0;
  c.stop_l2 = 0;
  return c;
}

// --- inversion ---------------------------------------------------------------------

/// Raw cube [S, T, R_all] -> velocity in m/s, clamped to the physical range.
inline Tensor<float> invert(LoadedModel& m, const Tensor<float>& raw_cube,
                            const data::NormalizationSpec& norm = {}) {
  if (raw_cube.rank() != 3) throw ShapeError("invert: cube must be [S, T, R], got " + shape_str(raw_cube.dims()));
  const auto want = m.net->input_dims();
  if (raw_cube.dim(0) != want[0] || raw_cube.dim(1) < want[1] || raw_cube.dim(2) < want[2])
    throw ShapeError("invert: cube " + shape_str(raw_cube.dims()) + " does not match trained geometry " +
                     shape_str(want) + " (after truncation to " + std::to_string(m.load.time_steps) +
                     " samples and " + std::to_string(m.load.receivers) + " receivers)");
  const auto cube = data::preprocess_cube(raw_cube, m.load);
  if (cube.dims() != want)
    throw ShapeError("invert: preprocessed cube " + shape_str(cube.dims()) + ", expected " + shape_str(want));
  ad::Tape<float> tape;
  const auto y = m.net->forward(tape, cube.reshaped({1, want[0], want[1], want[2]}), {}).value();
  const auto out_dims = m.net->output_dims();
  auto v = data::denormalize_velocity(y.reshaped(out_dims), norm);
  for (auto& x : v.storage())
    x = std::clamp(x, static_cast<float>(norm.velocity_min), static_cast<float>(norm.velocity_max));
  return v;
}

}  // namespace seisinv::harness
