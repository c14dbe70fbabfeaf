#pragma once

// SeisInvNet and the encoder-decoder baseline over diffcore.
//
// SeisInvNet, per sample with S shots of [T, R]:
//   N   shallow CNN on each shot gather, same [T, R] output
//   S   one-hot (s, r) of length S + R
//   G   strided CNN on each shot gather down to 1x1xC
//   E[s, r] = [ N(D_s)[:, r] | onehot(s, r) | G(D_s) ]           length T+S+R+C
//   F1  shared MLP E -> h*w, one map per trace                   [S*R, h, w]
//   F2  feature-map dropout, conv stack, two x2 upsamplings      [1, H, W]

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/core/random.hpp"
#include "seisinv/core/tensor.hpp"
#include "seisinv/diffcore/ops.hpp"
#include "seisinv/diffcore/tape.hpp"

namespace seisinv::net {

struct ConvSpec {
  std::size_t out = 1;
  std::size_t kh = 3, kw = 3;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ConvSpec, out, kh, kw, sh, sw, ph, pw)

/// Decoder channel schedule: convs at h x w, then after each x2 upsampling.
struct DecoderSpec {
  std::vector<std::size_t> low, mid, high;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DecoderSpec, low, mid, high)

struct SeisInvNetConfig {
  std::size_t T = 1000, S = 20, R = 32, C = 128;
  std::size_t H = 100, W = 100, h = 25, w = 25;
  std::vector<std::size_t> neighborhood{8, 8};  // hidden channels; output is 1 channel
  std::vector<ConvSpec> global;                 // last layer's `out` must equal C
  std::vector<std::size_t> generator{2048, 1024};
  DecoderSpec decoder{{384, 192}, {96}, {48}};
  double dropout = 0.2;
  bool use_context = true;

  std::size_t embedding_length() const { return T + S + R + (use_context ? C : 0); }
  std::size_t maps() const { return S * R; }

  static SeisInvNetConfig paper() {
    SeisInvNetConfig c;
    c.global = {{16, 5, 2, 5, 2, 0, 0}, {32, 5, 2, 5, 2, 0, 0}, {64, 5, 2, 5, 2, 0, 0},
                {64, 2, 2, 2, 2, 0, 0}, {128, 2, 2, 2, 2, 0, 0}, {128, 2, 1, 2, 1, 0, 0}};
    return c;
  }

  /// 64x64 grid, 8 shots, 16 receivers, 400 samples.
  static SeisInvNetConfig toy() {
    SeisInvNetConfig c;
    c.T = 400, c.S = 8, c.R = 16, c.C = 64;
    c.H = c.W = 64, c.h = c.w = 16;
    c.global = {{16, 5, 2, 5, 2, 0, 0}, {32, 5, 2, 5, 2, 0, 0}, {32, 2, 2, 2, 2, 0, 0},
                {64, 2, 2, 2, 2, 0, 0}, {64, 2, 1, 2, 1, 0, 0}, {64, 2, 1, 2, 1, 0, 0}};
    c.generator = {512, 512};
    c.decoder = {{64, 64}, {32}, {16}};
    return c;
  }

  /// Small enough for an element-wise finite-difference check.
  static SeisInvNetConfig mini() {
    SeisInvNetConfig c;
    c.T = 40, c.S = 2, c.R = 4, c.C = 3;
    c.H = c.W = 16, c.h = c.w = 4;
    c.neighborhood = {2};
    c.global = {{2, 5, 2, 5, 2, 0, 0}, {3, 8, 2, 8, 2, 0, 0}};
    c.generator = {6};
    c.decoder = {{3}, {2}, {2}};
    return c;
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SeisInvNetConfig, T, S, R, C, H, W, h, w, neighborhood, global, generator, decoder,
                                   dropout, use_context)

struct BaselineConfig {
  std::size_t T = 1000, S = 20, R = 32;
  std::size_t H = 100, W = 100, h = 25, w = 25;
  std::vector<ConvSpec> encoder;  // sources as input channels, down to 1x1
  std::size_t seed_channels = 128;
  DecoderSpec decoder{{256, 128}, {64}, {32}};
  double dropout = 0.2;

  static BaselineConfig paper() {
    BaselineConfig c;
    c.encoder = {{32, 5, 2, 5, 2, 0, 0},   {64, 5, 2, 5, 2, 0, 0},  {128, 5, 2, 5, 2, 0, 0},
                 {256, 2, 2, 2, 2, 0, 0},  {256, 2, 2, 2, 2, 0, 0}, {512, 2, 1, 2, 1, 0, 0}};
    return c;
  }

  static BaselineConfig toy() {
    BaselineConfig c;
    c.T = 400, c.S = 8, c.R = 16;
    c.H = c.W = 64, c.h = c.w = 16;
    c.encoder = {{16, 5, 2, 5, 2, 0, 0}, {32, 5, 2, 5, 2, 0, 0}, {64, 2, 2, 2, 2, 0, 0},
                 {64, 2, 2, 2, 2, 0, 0}, {128, 2, 1, 2, 1, 0, 0}, {128, 2, 1, 2, 1, 0, 0}};
    c.seed_channels = 32;
    c.decoder = {{64, 64}, {32}, {16}};
    return c;
  }

  static BaselineConfig mini() {
    BaselineConfig c;
    c.T = 40, c.S = 2, c.R = 4;
    c.H = c.W = 16, c.h = c.w = 4;
    c.encoder = {{3, 5, 2, 5, 2, 0, 0}, {4, 8, 2, 8, 2, 0, 0}};
    c.seed_channels = 2;
    c.decoder = {{3}, {2}, {2}};
    return c;
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BaselineConfig, T, S, R, H, W, h, w, encoder, seed_channels, decoder, dropout)

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // feature-map dropout stream, needed when training
  /// Optional [N, S*R] 0/1 mask of traces; missing traces' maps (or data) are zeroed.
  const Tensor<float>* trace_keep = nullptr;
};

/// Intermediate values captured during a forward pass (copies).
template <class T>
struct ForwardTrace {
  Tensor<T> embeddings;    // [N*S*R, L]
  Tensor<T> feature_maps;  // [N, S*R, h, w]
};

template <class T>
class Network {
 public:
  virtual ~Network() = default;
  /// cubes [N, S, T, R] -> velocities [N, 1, H, W]
  virtual ad::Var<T> forward(ad::Tape<T>& tape, const Tensor<T>& cubes, const ForwardOptions& o,
                             ForwardTrace<T>* trace = nullptr) = 0;
  virtual nlohmann::json config_json() const = 0;
  virtual std::string kind() const = 0;
  virtual Shape input_dims() const = 0;  // [S, T, R]
  virtual Shape output_dims() const = 0;  // [H, W]

  ad::ParamStore<T>& params() { return params_; }
  const ad::ParamStore<T>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.trainable_count(); }

 protected:
  ad::ParamStore<T> params_;
};

namespace detail {

template <class T>
struct Conv {
  ad::Parameter<T>* w = nullptr;
  ad::Parameter<T>* b = nullptr;
  ad::Conv2dOpts opts;
};

template <class T>
struct Norm {
  ad::Parameter<T>*gamma = nullptr, *beta = nullptr, *mean = nullptr, *var = nullptr;
};

template <class T>
struct Dense {
  ad::Parameter<T>* w = nullptr;
  ad::Parameter<T>* b = nullptr;
};

/// Block = conv/dense, optional batch norm, optional leaky ReLU(0.2).
template <class T>
struct Block {
  std::optional<Conv<T>> conv;
  std::optional<Dense<T>> dense;
  std::optional<Norm<T>> norm;
  bool act = true;
};

template <class T>
class Builder {
 public:
  Builder(ad::ParamStore<T>& store, Rng& rng) : store_(store), rng_(rng) {}

  Block<T> conv(const std::string& name, std::size_t in, const ConvSpec& s, bool norm, bool act) {
    Block<T> b;
    Conv<T> c;
    c.w = &store_.add(name + ".weight", {s.out, in, s.kh, s.kw});
    ad::init_he(*c.w, in * s.kh * s.kw, rng_);
    if (!norm) c.b = &store_.add(name + ".bias", {s.out});
    c.opts = {s.sh, s.sw, s.ph, s.pw};
    b.conv = c;
    if (norm) b.norm = make_norm(name + ".norm", s.out);
    b.act = act;
    return b;
  }

  Block<T> dense(const std::string& name, std::size_t in, std::size_t out, bool norm, bool act) {
    Block<T> b;
    Dense<T> d;
    d.w = &store_.add(name + ".weight", {out, in});
    ad::init_he(*d.w, in, rng_);
    if (!norm) d.b = &store_.add(name + ".bias", {out});
    b.dense = d;
    if (norm) b.norm = make_norm(name + ".norm", out);
    b.act = act;
    return b;
  }

 private:
  Norm<T> make_norm(const std::string& name, std::size_t c) {
    Norm<T> n;
    n.gamma = &store_.add(name + ".gamma", {c});
    n.beta = &store_.add(name + ".beta", {c});
    n.mean = &store_.add(name + ".running_mean", {c}, false);
    n.var = &store_.add(name + ".running_var", {c}, false);
    n.gamma->value.fill(T{1});
    n.var->value.fill(T{1});
    return n;
  }

  ad::ParamStore<T>& store_;
  Rng& rng_;
};

template <class T>
ad::Var<T> apply(ad::Tape<T>& tape, const Block<T>& b, ad::Var<T> x, bool training) {
  std::optional<ad::Var<T>> bias;
  if (b.conv) {
    if (b.conv->b) bias = tape.param(*b.conv->b);
    x = ad::conv2d(x, tape.param(*b.conv->w), bias, b.conv->opts);
  } else {
    if (b.dense->b) bias = tape.param(*b.dense->b);
    x = ad::dense(x, tape.param(*b.dense->w), bias);
  }
  if (b.norm)
    x = ad::batch_norm(x, tape.param(*b.norm->gamma), tape.param(*b.norm->beta), *b.norm->mean, *b.norm->var,
                       {training});
  if (b.act) x = ad::leaky_relu(x, T(0.2));
  return x;
}

inline void conv_extent_chain(std::size_t& t, std::size_t& r, const ConvSpec& s) {
  auto step = [](std::size_t in, std::size_t k, int stride, int pad) -> std::size_t {
    const long span = static_cast<long>(in) + 2L * pad - static_cast<long>(k);
    if (span < 0 || span % stride > pad) return 0;
    return static_cast<std::size_t>(span / stride + 1);
  };
  t = step(t, s.kh, s.sh, s.ph);
  r = step(r, s.kw, s.sw, s.pw);
}

/// Decoder: [N, in, h, w] -> [N, 1, 4h, 4w].
template <class T>
struct Decoder {
  std::vector<Block<T>> low, mid, high;
  Block<T> out;

  void build(Builder<T>& b, const std::string& name, std::size_t in, const DecoderSpec& spec) {
    std::size_t c = in;
    int k = 0;
    auto stage = [&](std::vector<Block<T>>& dst, const std::vector<std::size_t>& chans) {
      for (auto oc : chans) {
        dst.push_back(b.conv(name + ".conv" + std::to_string(++k), c, {oc, 3, 3, 1, 1, 1, 1}, true, true));
        c = oc;
      }
    };
    stage(low, spec.low);
    stage(mid, spec.mid);
    stage(high, spec.high);
    out = b.conv(name + ".out", c, {1, 3, 3, 1, 1, 1, 1}, false, false);
  }

  ad::Var<T> run(ad::Tape<T>& tape, ad::Var<T> x, bool training) const {
    for (const auto& blk : low) x = apply(tape, blk, x, training);
    x = ad::upsample_nearest(x, 2);
    for (const auto& blk : mid) x = apply(tape, blk, x, training);
    x = ad::upsample_nearest(x, 2);
    for (const auto& blk : high) x = apply(tape, blk, x, training);
    return apply(tape, out, x, training);
  }

  std::size_t depth() const { return low.size() + mid.size() + high.size() + 1; }
};

template <class T>
Tensor<T> mask_as(const Tensor<float>& m) {
  return m.template cast<T>();
}

}  // namespace detail

template <class T>
class SeisInvNet : public Network<T> {
 public:
  explicit SeisInvNet(SeisInvNetConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    validate_config();
    Rng rng(derive_seed(seed, {0x5e15}));
    detail::Builder<T> b(this->params_, rng);
    std::size_t c = 1;
    for (std::size_t i = 0; i < cfg_.neighborhood.size(); ++i) {
      nbr_.push_back(b.conv("encoder.neighborhood.conv" + std::to_string(i + 1), c,
                            {cfg_.neighborhood[i], 3, 3, 1, 1, 1, 1}, false, true));
      c = cfg_.neighborhood[i];
    }
    nbr_.push_back(b.conv("encoder.neighborhood.conv" + std::to_string(cfg_.neighborhood.size() + 1), c,
                          {1, 3, 3, 1, 1, 1, 1}, false, false));
    if (cfg_.use_context) {
      c = 1;
      for (std::size_t i = 0; i < cfg_.global.size(); ++i) {
        glob_.push_back(b.conv("encoder.global.conv" + std::to_string(i + 1), c, cfg_.global[i], true, true));
        c = cfg_.global[i].out;
      }
    }
    std::size_t f = cfg_.embedding_length();
    for (std::size_t i = 0; i < cfg_.generator.size(); ++i) {
      gen_.push_back(b.dense("generator.fc" + std::to_string(i + 1), f, cfg_.generator[i], true, true));
      f = cfg_.generator[i];
    }
    gen_.push_back(b.dense("generator.fc" + std::to_string(cfg_.generator.size() + 1), f, cfg_.h * cfg_.w, false,
                           false));
    dec_.build(b, "decoder", cfg_.maps(), cfg_.decoder);
    dec_.out.conv->b->value.fill(T(0.5));  // mid-range start in normalized velocity
  }

  const SeisInvNetConfig& config() const { return cfg_; }
  nlohmann::json config_json() const override { return cfg_; }
  std::string kind() const override { return "seisinvnet"; }
  Shape input_dims() const override { return {cfg_.S, cfg_.T, cfg_.R}; }
  Shape output_dims() const override { return {cfg_.H, cfg_.W}; }

  /// Longest conv/dense path, counted as the documentation metric.
  std::size_t longest_path() const {
    const std::size_t enc = std::max(nbr_.size(), glob_.size());
    return enc + gen_.size() + dec_.depth();
  }

  /// One-hot observation setup: ones at s and S + r.
  Tensor<T> observation_onehot(std::size_t s, std::size_t r) const {
    if (s >= cfg_.S || r >= cfg_.R)
      throw DataError("observation (" + std::to_string(s) + ", " + std::to_string(r) + ") outside S=" +
                      std::to_string(cfg_.S) + ", R=" + std::to_string(cfg_.R));
    Tensor<T> v({cfg_.S + cfg_.R});
    v[s] = T{1};
    v[cfg_.S + r] = T{1};
    return v;
  }

  /// profiles [M, 1, T, R] -> [M, 1, T, R]
  ad::Var<T> neighborhood_encode(ad::Tape<T>& tape, ad::Var<T> x, bool training) const {
    check_profiles(x.dims(), "neighborhood_encode");
    for (const auto& blk : nbr_) x = detail::apply(tape, blk, x, training);
    return x;
  }

  /// profiles [M, 1, T, R] -> [M, C]
  ad::Var<T> global_encode(ad::Tape<T>& tape, ad::Var<T> x, bool training) const {
    check_profiles(x.dims(), "global_encode");
    if (glob_.empty()) throw DataError("global context disabled in this configuration");
    for (const auto& blk : glob_) x = detail::apply(tape, blk, x, training);
    return ad::reshape(x, {x.dims()[0], cfg_.C});
  }

  /// profiles [N*S, 1, T, R] -> embeddings [N*S*R, L], rows ordered (n, s, r).
  ad::Var<T> embed(ad::Tape<T>& tape, ad::Var<T> profiles, bool training) const {
    const std::size_t M = profiles.dims().at(0), S = cfg_.S, R = cfg_.R;
    if (M % S != 0) throw ShapeError("embed: profile count " + std::to_string(M) + " not a multiple of S");
    auto nb = neighborhood_encode(tape, profiles, training);
    nb = ad::reshape(ad::transpose_last2(nb), {M * R, cfg_.T});
    Tensor<T> onehot({M * R, S + R});
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t r = 0; r < R; ++r) {
        onehot(m * R + r, m % S) = T{1};
        onehot(m * R + r, S + r) = T{1};
      }
    std::vector<ad::Var<T>> parts{nb, tape.constant(std::move(onehot))};
    if (cfg_.use_context) parts.push_back(ad::repeat_interleave(global_encode(tape, profiles, training), R));
    return ad::concat(parts, 1);
  }

  /// embeddings [K, L] -> maps [K, h*w]; the same weights apply to every row.
  ad::Var<T> generate(ad::Tape<T>& tape, ad::Var<T> e, bool training) const {
    if (e.dims().size() != 2 || e.dims()[1] != cfg_.embedding_length())
      throw ShapeError("generate: embeddings " + shape_str(e.dims()) + ", expected [K, " +
                       std::to_string(cfg_.embedding_length()) + "]");
    for (const auto& blk : gen_) e = detail::apply(tape, blk, e, training);
    return e;
  }

  /// stack [N, S*R, h, w] -> [N, 1, H, W]
  ad::Var<T> decode(ad::Tape<T>& tape, ad::Var<T> stack, const ForwardOptions& o) const {
    const auto& d = stack.dims();
    if (d.size() != 4 || d[1] != cfg_.maps() || d[2] != cfg_.h || d[3] != cfg_.w)
      throw ShapeError("decode: feature stack " + shape_str(d) + ", expected [N, " + std::to_string(cfg_.maps()) +
                       ", " + std::to_string(cfg_.h) + ", " + std::to_string(cfg_.w) + "]");
    if (o.trace_keep) stack = ad::channel_mask(stack, detail::mask_as<T>(*o.trace_keep));
    if (o.training && cfg_.dropout > 0) {
      if (!o.rng) throw UsageError("training forward needs a dropout RNG");
      stack = ad::dropout(stack, cfg_.dropout, ad::DropoutGranularity::FeatureMap, *o.rng, true);
    }
    return dec_.run(tape, stack, o.training);
  }

  ad::Var<T> forward(ad::Tape<T>& tape, const Tensor<T>& cubes, const ForwardOptions& o,
                     ForwardTrace<T>* trace = nullptr) override {
    const auto& d = cubes.dims();
    if (d.size() != 4 || d[1] != cfg_.S || d[2] != cfg_.T || d[3] != cfg_.R)
      throw ShapeError("seisinvnet input " + shape_str(d) + ", expected [N, " + std::to_string(cfg_.S) + ", " +
                       std::to_string(cfg_.T) + ", " + std::to_string(cfg_.R) + "]");
    const std::size_t N = d[0];
    auto profiles = tape.constant(cubes.reshaped({N * cfg_.S, 1, cfg_.T, cfg_.R}));
    auto e = embed(tape, profiles, o.training);
    auto maps = ad::reshape(generate(tape, e, o.training), {N, cfg_.maps(), cfg_.h, cfg_.w});
    if (trace) {
      trace->embeddings = e.value();
      trace->feature_maps = maps.value();
    }
    return decode(tape, maps, o);
  }

 private:
  void validate_config() const {
    if (cfg_.h * 4 != cfg_.H || cfg_.w * 4 != cfg_.W)
      throw DataError("feature maps must be a quarter of the model extent (two x2 upsamplings)");
    if (!(cfg_.dropout >= 0 && cfg_.dropout < 1)) throw DataError("dropout rate must be in [0, 1)");
    if (!cfg_.use_context) return;
    std::size_t t = cfg_.T, r = cfg_.R;
    for (const auto& s : cfg_.global) conv_chain_step(t, r, s);
    if (t != 1 || r != 1 || cfg_.global.empty() || cfg_.global.back().out != cfg_.C)
      throw DataError("global encoder schedule ends at " + std::to_string(t) + "x" + std::to_string(r) +
                      " instead of 1x1 with C channels");
  }

  static void conv_chain_step(std::size_t& t, std::size_t& r, const ConvSpec& s) {
    detail::conv_extent_chain(t, r, s);
    if (t == 0 || r == 0) throw DataError("global encoder layer does not tile its input");
  }

  void check_profiles(const Shape& d, const char* op) const {
    if (d.size() != 4 || d[1] != 1 || d[2] != cfg_.T || d[3] != cfg_.R)
      throw ShapeError(std::string(op) + ": profiles " + shape_str(d) + ", expected [M, 1, " +
                       std::to_string(cfg_.T) + ", " + std::to_string(cfg_.R) + "]");
  }

  SeisInvNetConfig cfg_;
  std::vector<detail::Block<T>> nbr_, glob_, gen_;
  detail::Decoder<T> dec_;
};

/// Encoder-decoder baseline: shots as channels, conv encoder to a 1x1 code, dense
/// projection to a [seed_channels, h, w] map (a full-size transposed conv), decoder.
template <class T>
class Baseline : public Network<T> {
 public:
  explicit Baseline(BaselineConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    if (cfg_.h * 4 != cfg_.H || cfg_.w * 4 != cfg_.W)
      throw DataError("baseline seed map must be a quarter of the model extent");
    std::size_t t = cfg_.T, r = cfg_.R;
    for (const auto& s : cfg_.encoder) {
      detail::conv_extent_chain(t, r, s);
      if (t == 0 || r == 0) throw DataError("baseline encoder layer does not tile its input");
    }
    if (t != 1 || r != 1 || cfg_.encoder.empty()) throw DataError("baseline encoder does not reach 1x1");
    Rng rng(derive_seed(seed, {0xba5e}));
    detail::Builder<T> b(this->params_, rng);
    std::size_t c = cfg_.S;
    for (std::size_t i = 0; i < cfg_.encoder.size(); ++i) {
      enc_.push_back(b.conv("encoder.conv" + std::to_string(i + 1), c, cfg_.encoder[i], true, true));
      c = cfg_.encoder[i].out;
    }
    code_ = c;
    proj_ = b.dense("projection", c, cfg_.seed_channels * cfg_.h * cfg_.w, false, true);
    dec_.build(b, "decoder", cfg_.seed_channels, cfg_.decoder);
    dec_.out.conv->b->value.fill(T(0.5));
  }

  const BaselineConfig& config() const { return cfg_; }
  nlohmann::json config_json() const override { return cfg_; }
  std::string kind() const override { return "baseline"; }
  Shape input_dims() const override { return {cfg_.S, cfg_.T, cfg_.R}; }
  Shape output_dims() const override { return {cfg_.H, cfg_.W}; }

  /// Bottleneck [N, code, 1, 1].
  ad::Var<T> encode(ad::Tape<T>& tape, ad::Var<T> x, bool training) const {
    for (const auto& blk : enc_) x = detail::apply(tape, blk, x, training);
    return x;
  }

  ad::Var<T> forward(ad::Tape<T>& tape, const Tensor<T>& cubes, const ForwardOptions& o,
                     ForwardTrace<T>* = nullptr) override {
    const auto& d = cubes.dims();
    if (d.size() != 4 || d[1] != cfg_.S || d[2] != cfg_.T || d[3] != cfg_.R)
      throw ShapeError("baseline input " + shape_str(d) + ", expected [N, " + std::to_string(cfg_.S) + ", " +
                       std::to_string(cfg_.T) + ", " + std::to_string(cfg_.R) + "]");
    const std::size_t N = d[0];
    auto x = tape.constant(cubes);
    if (o.trace_keep) {
      // missing traces enter as zero columns
      const auto keep = detail::mask_as<T>(*o.trace_keep);
      auto m = std::make_shared<Tensor<T>>(d);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t s = 0; s < cfg_.S; ++s)
          for (std::size_t t = 0; t < cfg_.T; ++t)
            for (std::size_t r = 0; r < cfg_.R; ++r) (*m)(n, s, t, r) = keep(n, s * cfg_.R + r);
      x = ad::mask_multiply<T>(x, m);
    }
    auto code = ad::reshape(encode(tape, x, o.training), {N, code_});
    auto seedmap = ad::reshape(detail::apply(tape, proj_, code, o.training), {N, cfg_.seed_channels, cfg_.h, cfg_.w});
    if (o.training && cfg_.dropout > 0) {
      if (!o.rng) throw UsageError("training forward needs a dropout RNG");
      seedmap = ad::dropout(seedmap, cfg_.dropout, ad::DropoutGranularity::FeatureMap, *o.rng, true);
    }
    return dec_.run(tape, seedmap, o.training);
  }

 private:
  BaselineConfig cfg_;
  std::vector<detail::Block<T>> enc_;
  detail::Block<T> proj_;
  std::size_t code_ = 0;
  detail::Decoder<T> dec_;
};

/// Builds a network from {"kind": ..., "config": {...}}.
template <class T>
std::unique_ptr<Network<T>> make_network(const nlohmann::json& j, std::uint64_t seed) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "seisinvnet") return std::make_unique<SeisInvNet<T>>(j.at("config").get<SeisInvNetConfig>(), seed);
  if (kind == "baseline") return std::make_unique<Baseline<T>>(j.at("config").get<BaselineConfig>(), seed);
  throw DataError("unknown network kind '" + kind + "'");
}

template <class T>
nlohmann::json describe(const Network<T>& n) {
  return {{"kind", n.kind()}, {"config", n.config_json()}};
}

}  // namespace seisinv::net
