#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "eranet/attention.hpp"
#include "eranet/reparam.hpp"
#include "eranet/rng.hpp"
#include "eranet/tensor_core.hpp"

namespace eranet {

enum class ModelMode { training, fused };

inline std::string_view to_string(ModelMode m) { return m == ModelMode::training ? "training" : "fused"; }

struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t channels = 32;
  std::size_t blocks = 5;
  std::size_t expansion = 2;
  std::size_t cam_reduction = 8;
  bool use_cam = true;
  bool use_sam = true;
  bool plain_krm = false;
  EdgeOperator edge = EdgeOperator::kirsch;
  CamActivation cam_activation = CamActivation::relu;
  NormMode norm = NormMode::per_channel;
  double ln_eps = 1e-5;
  bool global_residual = true;

  KrmLayout krm_layout() const { return {channels, expansion * channels, edge, plain_krm}; }

  void validate() const {
    if (in_channels == 0 || channels == 0) throw ValueError("model: channel counts must be positive");
    if (use_cam && (cam_reduction == 0 || channels % cam_reduction != 0))
      throw ValueError("model: attention reduction " + std::to_string(cam_reduction) + " does not divide " +
                       std::to_string(channels));
    if (!(ln_eps > 0)) throw ValueError("model: layer-norm epsilon must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class V>
struct ConvLParams {
  ConvParams<V> conv{};
  V gain{};
  V shift{};
  V slopes{};
};

template <class V>
struct EarbParams {
  KrmParams<V> krm{};
  /// Single 3x3 replacement for krm, populated in fused mode.
  ConvParams<V> krm_fused{};
  V krm_slopes{};
  ConvLParams<V> convl{};
  CamParams<V> cam{};
  SamParams<V> sam{};
};

template <class V>
struct NetParams {
  ConvLParams<V> head{};
  std::vector<EarbParams<V>> blocks;
  ConvParams<V> tail{};
};

template <typename T>
using ConvLWeights = ConvLParams<Tensor4<T>>;
template <typename T>
using EarbWeights = EarbParams<Tensor4<T>>;

// ---------------------------------------------------------------- forward

template <class E>
typename E::Value convl_forward(E& e, const typename E::Value& x, const ConvLParams<typename E::Value>& w,
                                typename E::Scalar eps = 1e-5, NormMode norm = NormMode::per_channel) {
  auto y = conv_same(e, x, w.conv.weight, w.conv.bias_ptr());
  return e.prelu(e.layer_norm(y, w.gain, w.shift, eps, norm), w.slopes);
}

template <class E>
typename E::Value earb_forward(E& e, const typename E::Value& x, const EarbParams<typename E::Value>& w,
                               const ModelConfig& cfg, ModelMode mode) {
  using V = typename E::Value;
  using S = typename E::Scalar;
  V k;
  if (mode == ModelMode::fused) {
    if constexpr (!E::records)
      if (w.krm_fused.weight.empty()) throw ValueError("EARB: fused mode requested but no fused kernel is present");
    k = conv_same(e, x, w.krm_fused.weight, w.krm_fused.bias_ptr());
  } else {
    k = krm_forward(e, x, w.krm);
  }
  V u = convl_forward(e, e.prelu(k, w.krm_slopes), w.convl, static_cast<S>(cfg.ln_eps), cfg.norm);
  V gated = u;
  if (cfg.use_cam) gated = e.mul(channel_attention(e, u, w.cam, cfg.cam_activation), gated);
  if (cfg.use_sam) gated = e.mul(spatial_attention(e, u, w.sam), gated);
  return e.add(x, gated);
}

/// Head, blocks, tail, optional global residual. Clamping to [0, 1] is for
/// inference only.
template <class E>
typename E::Value net_forward(E& e, const typename E::Value& x, const NetParams<typename E::Value>& w,
                              const ModelConfig& cfg, ModelMode mode, bool clamp_output) {
  using S = typename E::Scalar;
  if (e.shape(x).c != cfg.in_channels)
    throw ShapeError("network expects " + std::to_string(cfg.in_channels) + "-channel input, got " + e.shape(x).str());
  auto f = convl_forward(e, x, w.head, static_cast<S>(cfg.ln_eps), cfg.norm);
  for (const auto& b : w.blocks) f = earb_forward(e, f, b, cfg, mode);
  auto y = conv_same(e, f, w.tail.weight, w.tail.bias_ptr());
  if (cfg.global_residual) y = e.add(y, x);
  if (clamp_output) y = e.clamp(y, S(0), S(1));
  return y;
}

// ---------------------------------------------------------------- traversal

struct ParamInfo {
  std::string name;
  /// Rank written to weight files: 1 for per-channel vectors, 4 for kernels.
  int rank = 4;
  bool trainable = true;
};

namespace detail {

template <class P, class... R>
const P& first_of(const P& p, const R&...) {
  return p;
}

template <class F, class... C>
void walk_conv(const std::string& name, F& f, C&... c) {
  f(ParamInfo{name + ".weight", 4, true}, c.weight...);
  if (first_of(c...).has_bias) f(ParamInfo{name + ".bias", 1, true}, c.bias...);
}

template <class F, class... L>
void walk_convl(const std::string& name, F& f, L&... l) {
  walk_conv(name + ".conv", f, l.conv...);
  f(ParamInfo{name + ".ln.gain", 1, true}, l.gain...);
  f(ParamInfo{name + ".ln.shift", 1, true}, l.shift...);
  f(ParamInfo{name + ".prelu", 1, true}, l.slopes...);
}

template <class F, class... K>
void walk_krm(const std::string& name, F& f, K&... k) {
  const KrmLayout& l = first_of(k...).layout;
  walk_conv(name + ".normal", f, k.normal...);
  if (l.has_expand()) {
    walk_conv(name + ".expand", f, k.expand...);
    walk_conv(name + ".squeeze", f, k.squeeze...);
  }
  const std::size_t nb = first_of(k...).branches.size();
  for (std::size_t i = 0; i < nb; ++i) {
    const std::string p = name + ".edge." + std::to_string(i);
    walk_conv(p + ".pre", f, k.branches[i].pre...);
    f(ParamInfo{p + ".scale", 1, true}, k.branches[i].scale...);
    f(ParamInfo{p + ".bias", 1, true}, k.branches[i].bias...);
  }
  if (nb > 0) f(ParamInfo{name + ".edge_kernels", 4, false}, k.kernels...);
}

}  // namespace detail

/// Calls f(info, leaf...) for every tensor of the given mode, walking any
/// number of structurally identical parameter trees in lockstep. Frozen
/// tensors are reported with trainable = false.
template <class F, class... P>
void visit_params(const ModelConfig& cfg, ModelMode mode, F&& f, P&... trees) {
  using detail::walk_conv;
  detail::walk_convl("head", f, trees.head...);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b);
    if (mode == ModelMode::training)
      detail::walk_krm(p + ".krm", f, trees.blocks[b].krm...);
    else
      walk_conv(p + ".krm_fused", f, trees.blocks[b].krm_fused...);
    f(ParamInfo{p + ".krm_act", 1, true}, trees.blocks[b].krm_slopes...);
    detail::walk_convl(p + ".convl", f, trees.blocks[b].convl...);
    if (cfg.use_cam) {
      walk_conv(p + ".cam.reduce", f, trees.blocks[b].cam.reduce...);
      walk_conv(p + ".cam.expand", f, trees.blocks[b].cam.expand...);
    }
    if (cfg.use_sam) walk_conv(p + ".sam", f, trees.blocks[b].sam.conv7...);
  }
  walk_conv("tail", f, trees.tail...);
}

/// Same structure (layouts, bias flags, branch counts) with a different handle type.
template <class U, class V>
ConvParams<U> rebind(const ConvParams<V>& p) {
  ConvParams<U> r;
  r.has_bias = p.has_bias;
  return r;
}

template <class U, class V>
NetParams<U> rebind(const NetParams<V>& p) {
  NetParams<U> r;
  r.head.conv = rebind<U>(p.head.conv);
  r.tail = rebind<U>(p.tail);
  r.blocks.resize(p.blocks.size());
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const auto& s = p.blocks[b];
    auto& d = r.blocks[b];
    d.krm.layout = s.krm.layout;
    d.krm.normal = rebind<U>(s.krm.normal);
    d.krm.expand = rebind<U>(s.krm.expand);
    d.krm.squeeze = rebind<U>(s.krm.squeeze);
    d.krm.branches.resize(s.krm.branches.size());
    for (std::size_t i = 0; i < s.krm.branches.size(); ++i) d.krm.branches[i].pre = rebind<U>(s.krm.branches[i].pre);
    d.krm_fused = rebind<U>(s.krm_fused);
    d.convl.conv = rebind<U>(s.convl.conv);
    d.cam.reduce = rebind<U>(s.cam.reduce);
    d.cam.expand = rebind<U>(s.cam.expand);
    d.sam.conv7 = rebind<U>(s.sam.conv7);
  }
  return r;
}

// ---------------------------------------------------------------- construction

template <typename T>
ConvLWeights<T> make_convl(std::size_t in, std::size_t out) {
  ConvLWeights<T> w;
  w.conv = make_conv<T>(out, in, 3);
  w.gain = Tensor4<T>(vec_shape(out), T(1));
  w.shift = Tensor4<T>(vec_shape(out));
  w.slopes = Tensor4<T>(vec_shape(out), T(0.25));
  return w;
}

/// Shapes for every tensor of the given mode; values are zero except LN
/// gains (1) and PReLU slopes (0.25).
template <typename T>
NetParams<Tensor4<T>> make_net(const ModelConfig& cfg, ModelMode mode) {
  cfg.validate();
  const std::size_t C = cfg.channels;
  NetParams<Tensor4<T>> p;
  p.head = make_convl<T>(cfg.in_channels, C);
  p.blocks.resize(cfg.blocks);
  for (auto& b : p.blocks) {
    if (mode == ModelMode::training)
      b.krm = make_krm<T>(cfg.krm_layout());
    else {
      b.krm.layout = cfg.krm_layout();
      b.krm_fused = make_conv<T>(C, C, 3);
    }
    b.krm_slopes = Tensor4<T>(vec_shape(C), T(0.25));
    b.convl = make_convl<T>(C, C);
    if (cfg.use_cam) b.cam = make_cam<T>(C, cfg.cam_reduction);
    if (cfg.use_sam) b.sam = make_sam<T>();
  }
  p.tail = make_conv<T>(cfg.in_channels, C, 3);
  return p;
}

/// Uniform(+-1/sqrt(fan_in)) conv weights, edge scales 1/8, zero biases.
template <typename T>
void init_params(const ModelConfig& cfg, ModelMode mode, NetParams<Tensor4<T>>& p, Rng& rng) {
  visit_params(cfg, mode, [&](const ParamInfo& info, Tensor4<T>& t) {
    if (!info.trainable) return;
    const auto ends = [&](std::string_view s) { return info.name.ends_with(s); };
    if (ends(".weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.c() * t.h() * t.w()));
      for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
    } else if (ends(".scale")) {
      t.fill(T(0.125));
    } else if (ends(".gain")) {
      t.fill(T(1));
    } else if (ends(".prelu") || ends(".krm_act")) {
      t.fill(T(0.25));
    } else {
      t.fill(T(0));
    }
  }, p);
}

// ---------------------------------------------------------------- accounting

struct ParamEntry {
  std::string name;
  std::size_t count = 0;
};

struct ParamReport {
  std::vector<ParamEntry> entries;
  std::size_t total = 0;

  /// Single-precision storage of the trainable scalars.
  std::size_t bytes() const { return total * 4; }
};

/// Multiply-accumulates for one forward pass over an h x w image.
inline std::size_t analytic_macs(const ModelConfig& cfg, ModelMode mode, std::size_t h, std::size_t w) {
  const std::size_t C = cfg.channels, px = h * w;
  std::size_t per = cfg.in_channels * C * 9 + C * cfg.in_channels * 9;
  std::size_t krm = mode == ModelMode::training ? krm_macs_per_pixel(cfg.krm_layout()) : fused_macs_per_pixel(C);
  std::size_t block = krm + C * C * 9 + (cfg.use_sam ? 2 * 49 : 0);
  std::size_t cam = cfg.use_cam ? 2 * 2 * C * (C / cfg.cam_reduction) : 0;
  return px * (per + cfg.blocks * block) + cfg.blocks * cam;
}

// ---------------------------------------------------------------- model

/// Head ConvL, a stack of attention residual blocks and a tail conv, in
/// training (multi-branch) or fused (single-conv) form.
template <typename T>
class EraNet {
 public:
  using Params = NetParams<Tensor4<T>>;

  EraNet() : EraNet(ModelConfig{}) {}
  explicit EraNet(const ModelConfig& cfg, ModelMode mode = ModelMode::training)
      : cfg_(cfg), mode_(mode), params_(make_net<T>(cfg, mode)) {}
  EraNet(const ModelConfig& cfg, ModelMode mode, Params params) : cfg_(cfg), mode_(mode), params_(std::move(params)) {
    cfg_.validate();
    check_shapes();
  }

  static EraNet initialized(const ModelConfig& cfg, std::uint64_t seed) {
    EraNet m(cfg);
    Rng rng(seed);
    init_params(cfg, ModelMode::training, m.params_, rng);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ModelMode mode() const { return mode_; }
  const Params& params() const { return params_; }
  Params& params() { return params_; }

  /// Inference forward (output clamped to [0, 1]).
  Tensor4<T> forward(const Tensor4<T>& x) const { return forward(x, true); }
  Tensor4<T> forward(const Tensor4<T>& x, bool clamp_output) const {
    Eager<T> e;
    return net_forward(e, x, params_, cfg_, mode_, clamp_output);
  }

  /// Copy with every reparameterization module collapsed to a single conv.
  EraNet fused() const {
    if (mode_ == ModelMode::fused) throw ValueError("model is already fused");
    Params p = params_;
    for (auto& b : p.blocks) {
      b.krm_fused = fuse_krm(b.krm).kernel;
      KrmWeights<T> empty;
      empty.layout = b.krm.layout;
      b.krm = std::move(empty);
    }
    return EraNet(cfg_, ModelMode::fused, std::move(p));
  }

  ParamReport param_report() const {
    ParamReport r;
    visit_params(cfg_, mode_, [&](const ParamInfo& info, const Tensor4<T>& t) {
      if (!info.trainable) return;
      r.entries.push_back({info.name, t.size()});
      r.total += t.size();
    }, params_);
    return r;
  }
  std::size_t param_count() const { return param_report().total; }

  template <typename U>
  EraNet<U> cast() const {
    auto p = rebind<Tensor4<U>>(params_);
    visit_params(cfg_, mode_, [](const ParamInfo&, Tensor4<U>& dst, const Tensor4<T>& src) { dst = src.template cast<U>(); },
                 p, params_);
    return EraNet<U>(cfg_, mode_, std::move(p));
  }

 private:
  void check_shapes() const {
    const Params ref = make_net<T>(cfg_, mode_);
    if (params_.blocks.size() != cfg_.blocks)
      throw ShapeError("model: expected " + std::to_string(cfg_.blocks) + " blocks, got " +
                       std::to_string(params_.blocks.size()));
    for (std::size_t b = 0; b < cfg_.blocks; ++b)
      if (mode_ == ModelMode::training && params_.blocks[b].krm.branches.size() != ref.blocks[b].krm.branches.size())
        throw ShapeError("model: block " + std::to_string(b) + " has the wrong number of edge branches");
    visit_params(cfg_, mode_, [](const ParamInfo& info, const Tensor4<T>& want, const Tensor4<T>& got) {
      if (want.shape() != got.shape())
        throw ShapeError("model: tensor '" + info.name + "' has shape " + got.shape().str() + ", expected " +
                         want.shape().str());
    }, ref, params_);
  }

  ModelConfig cfg_;
  ModelMode mode_;
  Params params_;
};

template <typename T>
Tensor4<T> eranet_forward(const Tensor4<T>& x, const EraNet<T>& m) {
  return m.forward(x);
}

template <typename T>
EraNet<T> fuse_model(const EraNet<T>& m) {
  return m.fused();
}

template <typename T>
Tensor4<T> convl_forward(const Tensor4<T>& x, const ConvLWeights<T>& w, T eps = T(1e-5),
                         NormMode norm = NormMode::per_channel) {
  Eager<T> e;
  return convl_forward(e, x, w, eps, norm);
}

template <typename T>
Tensor4<T> earb_forward(const Tensor4<T>& x, const EarbWeights<T>& w, const ModelConfig& cfg, ModelMode mode) {
  Eager<T> e;
  return earb_forward(e, x, w, cfg, mode);
}

}  // namespace eranet
