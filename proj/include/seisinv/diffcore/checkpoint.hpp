#pragma once

// Checkpoint container:
//   "SINVCKPT" | u32 version | u64 json length | json metadata
//   | one SINV tensor per parameter | (optional) adam first moments | second moments
// Metadata lists the parameter names and shapes in payload order.

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "seisinv/core/error.hpp"
#include "seisinv/core/sinv_io.hpp"
#include "seisinv/diffcore/optim.hpp"
#include "seisinv/diffcore/tape.hpp"

namespace seisinv::ad {

inline constexpr std::array<char, 8> kCheckpointMagic{'S', 'I', 'N', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint64_t step = 0;
  std::string config_hash;
  nlohmann::json extra = nlohmann::json::object();
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store, const CheckpointInfo& info,
                     const Adam<T>* adam = nullptr) {
  nlohmann::json meta;
  meta["step"] = info.step;
  meta["config_hash"] = info.config_hash;
  meta["extra"] = info.extra;
  meta["has_optimizer"] = adam != nullptr;
  for (const auto& p : store.all()) meta["params"].push_back({{"name", p.name}, {"shape", p.value.dims()}});
  if (adam) {
    meta["adam_step"] = adam->step_count();
    for (auto* p : adam->params()) meta["adam_params"].push_back(p->name);
  }
  const std::string js = meta.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + tmp);
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    io::detail::put_u32(os, kCheckpointVersion);
    const std::uint64_t n = js.size();
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (const auto& p : store.all()) io::write_tensor(os, p.value);
    if (adam) {
      const auto& ps = adam->params();
      for (std::size_t k = 0; k < ps.size(); ++k) io::write_tensor(os, Tensor<double>(ps[k]->value.dims(), adam->first_moment(k)));
      for (std::size_t k = 0; k < ps.size(); ++k) io::write_tensor(os, Tensor<double>(ps[k]->value.dims(), adam->second_moment(k)));
    }
    if (!os) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

inline nlohmann::json read_checkpoint_header(std::istream& is, const std::filesystem::path& path) {
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw DataError(path.string() + ": not a checkpoint file");
  const auto version = io::detail::get_u32(is);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t n = 0;
  if (!is.read(reinterpret_cast<char*>(&n), sizeof n) || n > (1u << 28)) throw DataError("corrupt checkpoint header");
  std::string js(n, '\0');
  if (!is.read(js.data(), static_cast<std::streamsize>(n))) throw DataError("truncated checkpoint metadata");
  try {
    return nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
}

inline CheckpointInfo info_from_meta(const nlohmann::json& meta) {
  CheckpointInfo info;
  info.step = meta.at("step").get<std::uint64_t>();
  info.config_hash = meta.at("config_hash").get<std::string>();
  info.extra = meta.value("extra", nlohmann::json::object());
  return info;
}

}  // namespace detail

/// Metadata only; no tensors are read.
inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  return detail::info_from_meta(detail::read_checkpoint_header(is, path));
}

/// Restores parameter values (matched by name and shape) and, when given, Adam state.
template <class T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, ParamStore<T>& store, Adam<T>* adam = nullptr) {
  std::ifstream is(path, std::ios::binary);
  const auto meta = detail::read_checkpoint_header(is, path);

  const auto& plist = meta.at("params");
  if (plist.size() != store.all().size())
    throw DataError("checkpoint has " + std::to_string(plist.size()) + " parameters, network has " +
                    std::to_string(store.all().size()));
  for (const auto& entry : plist) {
    const auto name = entry.at("name").get<std::string>();
    auto* p = store.find(name);
    if (!p) throw DataError("checkpoint parameter '" + name + "' not in network");
    auto t = io::read_tensor<T>(is);
    if (t.dims() != p->value.dims())
      throw ShapeError("checkpoint parameter '" + name + "' has shape " + shape_str(t.dims()) + ", network expects " +
                       shape_str(p->value.dims()));
    p->value = std::move(t);
  }
  if (adam && meta.value("has_optimizer", false)) {
    const auto names = meta.at("adam_params").get<std::vector<std::string>>();
    if (names.size() != adam->params().size()) throw DataError("checkpoint optimizer state does not match network");
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] != adam->params()[k]->name) throw DataError("checkpoint optimizer order mismatch at " + names[k]);
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto t = io::read_tensor<double>(is);
      adam->first_moment(k).assign(t.values().begin(), t.values().end());
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto t = io::read_tensor<double>(is);
      adam->second_moment(k).assign(t.values().begin(), t.values().end());
    }
    adam->set_step_count(meta.at("adam_step").get<std::uint64_t>());
  }
  return detail::info_from_meta(meta);
}

}  // namespace seisinv::ad
