#pragma once

// Command-line front end. `run` is the whole program minus process setup so tests
// can drive it. Exit codes: 0 ok, 1 usage, 2 data/config, 3 numerical failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/core/sinv_io.hpp"
#include "seisinv/dataset.hpp"
#include "seisinv/geomodel.hpp"
#include "seisinv/harness.hpp"
#include "seisinv/metrics.hpp"
#include "seisinv/render.hpp"
#include "seisinv/wavesim.hpp"

namespace seisinv::cli {

namespace fs = std::filesystem;

namespace detail {

inline nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw DataError("cannot open config " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

/// Config file keys override `base`; absent keys keep their base values.
template <class T>
T overlay_config(const T& base, const std::string& path) {
  if (path.empty()) return base;
  nlohmann::json j = base;
  j.merge_patch(read_json_file(path));
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline data::DatasetConfig dataset_profile(const std::string& profile) {
  if (profile == "toy") return data::DatasetConfig::toy();
  if (profile == "paper") return data::DatasetConfig::paper();
  throw UsageError("unknown profile '" + profile + "' (expected toy or paper)");
}

inline data::LoadSpec load_profile(const std::string& profile) {
  return profile == "paper" ? data::LoadSpec::paper() : data::LoadSpec::toy();
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated list of integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("empty integer list");
  return out;
}

inline Tensor<float> read_velocity(const fs::path& p, const data::DatasetConfig& c) {
  if (p.extension() == ".json") {
    geo::LayeredModelSpec spec;
    read_json_file(p).get_to(spec);
    return geo::rasterize(spec, c.grid.rows, c.grid.cols, c.spacing).values;
  }
  return io::load_tensor<float>(p);
}

}  // namespace detail

struct Options {
  // shared
  std::string config, out, profile = "toy", data, split = "valid", checkpoint, input;
  std::uint64_t seed = 0;
  bool seed_set = false;
  // generate
  int per_type = 0;
  double noise_std = 0.0;
  std::string domain = "old";
  // train / finetune
  std::string variant = "eta";
  int epochs = 0;
  std::string old_data;
  // evaluation experiments
  std::string keep_receivers = "16,8";
  int source = 0, group_size = 8;
  // plot / invert
  std::vector<double> range;
  int scale = 1;
  std::string png;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Seismic velocity inversion: data generation, training, evaluation and figures", "seisinv"};
  app.require_subcommand(1);
  Options o;

  auto add_profile = [&](CLI::App* c) {
    c->add_option("--profile", o.profile, "Scale profile")->check(CLI::IsMember({"toy", "paper"}))->capture_default_str();
  };
  auto add_seed = [&](CLI::App* c, const std::string& what) {
    c->add_option("--seed", o.seed, what)->capture_default_str()->each([&](const std::string&) { o.seed_set = true; });
  };

  auto* gen = app.add_subcommand("generate", "Generate velocity models and simulated cubes with a manifest");
  gen->add_option("--out", o.out, "Dataset directory")->required();
  gen->add_option("--per-type", o.per_type, "Models per type (default: profile value)");
  add_seed(gen, "Dataset seed");
  gen->add_option("--noise-std", o.noise_std, "Noise std as a fraction of the dataset RMS of normalized cubes");
  gen->add_option("--domain", o.domain, "old (types I-IV) or new (faulted and five-interface)")
      ->check(CLI::IsMember({"old", "new"}));
  gen->add_option("--config", o.config, "Dataset config JSON; its keys override the profile");
  add_profile(gen);

  auto* sim = app.add_subcommand("simulate", "Simulate one velocity model (.sinv in m/s or layer-spec .json)");
  sim->add_option("model", o.input, "Velocity model file")->required();
  sim->add_option("--out", o.out, "Output cube (.sinv)")->required();
  sim->add_option("--config", o.config, "Dataset config JSON; its keys override the profile geometry and solver settings");
  add_profile(sim);

  auto* tr = app.add_subcommand("train", "Train a network variant");
  tr->add_option("--data", o.data, "Dataset directory");
  tr->add_option("--out", o.out, "Run directory")->required();
  tr->add_option("--variant", o.variant, "Variant alpha..eta")
      ->check(CLI::IsMember(harness::TrainConfig::variant_names()))
      ->capture_default_str();
  tr->add_option("--config", o.config, "Training config JSON; its keys override the --variant/--profile settings");
  tr->add_option("--epochs", o.epochs, "Epoch budget (default: profile value)");
  add_seed(tr, "Training seed");
  add_profile(tr);

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset split");
  ev->add_option("checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--split", o.split, "Split name")->capture_default_str();
  ev->add_option("--out", o.out, "Report directory")->required();

  auto* inv = app.add_subcommand("invert", "Invert one cube with a checkpoint");
  inv->add_option("checkpoint", o.checkpoint, "Checkpoint file")->required();
  inv->add_option("cube", o.input, "Raw cube (.sinv, [S, T, R])")->required();
  inv->add_option("--out", o.out, "Output velocity (.sinv, m/s)")->required();
  inv->add_option("--png", o.png, "Also write a heatmap here");

  auto* fm = app.add_subcommand("featuremaps", "Grouped mean feature maps for one source");
  fm->add_option("checkpoint", o.checkpoint, "SeisInvNet checkpoint")->required();
  fm->add_option("--data", o.data, "Dataset directory")->required();
  fm->add_option("--split", o.split, "Split name")->capture_default_str();
  fm->add_option("--source", o.source, "Source index (0-based)")->capture_default_str();
  fm->add_option("--group-size", o.group_size, "Receivers per group")->capture_default_str();
  fm->add_option("--out", o.out, "Output directory (figures/ and reports/)")->required();

  auto* dr = app.add_subcommand("dropout-eval", "Evaluate with randomly dropped receivers");
  dr->add_option("checkpoint", o.checkpoint, "Checkpoint file")->required();
  dr->add_option("--data", o.data, "Dataset directory")->required();
  dr->add_option("--split", o.split, "Split name")->capture_default_str();
  dr->add_option("--keep-receivers", o.keep_receivers, "Comma-separated keep counts")->capture_default_str();
  add_seed(dr, "Receiver selection seed");
  dr->add_option("--out", o.out, "Report directory")->required();

  auto* ft = app.add_subcommand("finetune", "Continue training a checkpoint on a new-domain dataset");
  ft->add_option("checkpoint", o.checkpoint, "Checkpoint file")->required();
  ft->add_option("--data", o.data, "New-domain dataset directory")->required();
  ft->add_option("--old-data", o.old_data, "Original dataset directory (for before/after reports)")->required();
  ft->add_option("--split", o.split, "Evaluation split on both domains")->capture_default_str();
  ft->add_option("--epochs", o.epochs, "Epochs (default 40)");
  add_seed(ft, "Training seed");
  ft->add_option("--out", o.out, "Run directory")->required();

  auto* pl = app.add_subcommand("plot", "Render a 2-D .sinv field as a PNG heatmap");
  pl->add_option("input", o.input, "2-D tensor file")->required();
  pl->add_option("--out", o.out, "PNG path")->required();
  pl->add_option("--range", o.range, "Value range lo hi (default: data min/max)")->expected(2);
  pl->add_option("--scale", o.scale, "Integer upscale factor")->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (argc <= 1) err << app.help();
    else err << "run 'seisinv --help' for usage\n";
    return 1;
  }

  try {
    if (gen->parsed()) {
      auto c = detail::overlay_config(detail::dataset_profile(o.profile), o.config);
      if (o.per_type > 0) c.n_per_type = o.per_type;
      if (o.seed_set) c.seed = o.seed;
      if (o.domain == "new" && c.domain != "new") {
        c = data::DatasetConfig::new_domain(c, c.n_per_type, c.split.train, c.split.valid, c.split.test);
        if (o.seed_set) c.seed = o.seed;
      }
      if (gen->count("--noise-std")) c.noise_fraction = o.noise_std;
      auto m = data::build_dataset(c, o.out, harness::eval_threads(), [&](std::size_t d, std::size_t n) {
        if (d == n || d % 50 == 0) out << "simulated " << d << "/" << n << std::endl;
      });
      out << m.samples.size() << " samples written to " << o.out << "\n";
      for (const auto& s : m.shortfall) err << "skipped " << s << "\n";
      return 0;
    }
    if (sim->parsed()) {
      auto c = detail::overlay_config(detail::dataset_profile(o.profile), o.config);
      geo::VelocityModel model;
      model.values = detail::read_velocity(o.input, c);
      model.spacing = c.spacing;
      const auto wavelet = sim::ricker_wavelet(c.sim.dominant_freq, c.sim.dt_int);
      auto geom = c.geometry;
      if (static_cast<int>(geom.receiver_columns.size()) != model.cols()) {
        const double dt = geom.record_dt;
        geom = sim::AcquisitionGeometry::uniform(model.cols(), static_cast<int>(geom.source_columns.size()),
                                                 geom.record_steps);
        geom.record_dt = dt;
      }
      const auto cube = sim::simulate_cube(model, geom, wavelet, c.sim);
      io::save_tensor(o.out, cube);
      out << "cube " << shape_str(cube.dims()) << " written to " << o.out << "\n";
      return 0;
    }
    if (tr->parsed()) {
      auto c = detail::overlay_config(harness::TrainConfig::variant_config(o.variant, o.profile), o.config);
      if (!o.data.empty()) c.manifest = o.data;
      if (o.epochs > 0) c.epochs = o.epochs;
      if (o.seed_set) c.seed = o.seed;
      harness::TrainHooks hooks;
      hooks.progress = &out;
      auto r = harness::train(c, o.out, hooks);
      out << "best epoch " << r.log.best_epoch + 1 << " (valid mssim " << r.log.best_mssim << "), checkpoints in "
          << (r.run_dir / "checkpoints").string() << "\n";
      return 0;
    }
    if (ev->parsed()) {
      auto rep = harness::evaluate(o.checkpoint, o.data, o.split);
      metrics::export_report(rep, o.out, o.split);
      const auto& a = rep.aggregate;
      out << o.split << ": mae " << a.mae << " mse " << a.mse << " ssim " << a.ssim << " mssim " << a.mssim
          << " soft_f " << a.soft_f << " (" << a.count << " samples)\n";
      return 0;
    }
    if (inv->parsed()) {
      auto m = harness::load_model(o.checkpoint);
      const auto v = harness::invert(m, io::load_tensor<float>(o.input));
      io::save_tensor(o.out, v);
      if (!o.png.empty()) render::render_heatmap(v, geo::kMinVelocity, geo::kMaxVelocity, o.png, 4);
      out << "velocity " << shape_str(v.dims()) << " written to " << o.out << "\n";
      return 0;
    }
    if (fm->parsed()) {
      auto m = harness::load_model(o.checkpoint);
      const auto man = data::load_manifest(o.data);
      const auto samples = data::load_split(man, o.split, m.load);
      const auto rep = harness::featuremap_report(*m.net, samples, static_cast<std::size_t>(o.source),
                                                  static_cast<std::size_t>(o.group_size));
      harness::write_featuremap_report(rep, fs::path(o.out) / "figures", fs::path(o.out) / "reports");
      for (std::size_t g = 0; g < rep.groups.size(); ++g)
        out << "receivers " << rep.receivers[g].first << "-" << rep.receivers[g].second << ": centroid column "
            << rep.centroids[g] << "\n";
      return 0;
    }
    if (dr->parsed()) {
      const auto keeps = detail::parse_int_list(o.keep_receivers);
      auto m = harness::load_model(o.checkpoint);
      const auto man = data::load_manifest(o.data);
      const auto samples = data::load_split(man, o.split, m.load);
      if (samples.empty()) throw DataError(o.data + ": split '" + o.split + "' is empty");
      const auto res = harness::receiver_dropout_eval(m, samples, keeps, o.seed, o.split);
      nlohmann::json summary = nlohmann::json::array();
      for (const auto& e : res) {
        metrics::export_report(e.report, o.out, "keep" + std::to_string(e.keep));
        summary.push_back({{"keep", e.keep}, {"retained", e.retained}, {"aggregate", e.report.aggregate}});
        out << "keep " << e.keep << ": mse " << e.report.aggregate.mse << " mssim " << e.report.aggregate.mssim << "\n";
      }
      std::ofstream(fs::path(o.out) / "dropout_eval.json", std::ios::trunc) << summary.dump(1) << '\n';
      return 0;
    }
    if (ft->parsed()) {
      auto c = harness::finetune_config(o.checkpoint, o.epochs > 0 ? o.epochs : 40);
      c.manifest = o.data;
      if (o.seed_set) c.seed = o.seed;
      const auto new_data = harness::load_train_data(c);
      const auto old_eval = data::load_split(data::load_manifest(o.old_data), o.split, c.load);
      const auto new_eval = data::load_split(data::load_manifest(o.data), o.split, c.load);
      if (old_eval.empty() || new_eval.empty()) throw DataError("evaluation split '" + o.split + "' is empty");
      harness::TrainHooks hooks;
      hooks.progress = &out;
      const auto r = harness::finetune(o.checkpoint, c, new_data, old_eval, new_eval, o.out, hooks);
      out << "new domain mssim " << r.new_before.aggregate.mssim << " -> " << r.new_after.aggregate.mssim
          << "; old domain mssim " << r.old_before.aggregate.mssim << " -> " << r.old_after.aggregate.mssim << "\n";
      return 0;
    }
    if (pl->parsed()) {
      const auto t = io::load_tensor<float>(o.input);
      if (t.rank() != 2) throw ShapeError("plot expects a 2-D tensor, got " + shape_str(t.dims()));
      double lo, hi;
      if (o.range.size() == 2) {
        lo = o.range[0], hi = o.range[1];
      } else {
        lo = *std::min_element(t.values().begin(), t.values().end());
        hi = *std::max_element(t.values().begin(), t.values().end());
        if (!(hi > lo)) hi = lo + 1;
      }
      render::render_heatmap(t, lo, hi, o.out, o.scale);
      out << "wrote " << o.out << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace seisinv::cli
