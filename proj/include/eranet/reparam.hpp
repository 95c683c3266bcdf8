#pragma once

#include <cstddef>
#include <vector>

#include "eranet/kirsch.hpp"
#include "eranet/tensor_core.hpp"

namespace eranet {

/// Structural description of one reparameterization module.
struct KrmLayout {
  std::size_t channels = 32;
  /// Width of the expand/squeeze branch; 0 drops the branch.
  std::size_t expanded = 64;
  EdgeOperator edge = EdgeOperator::kirsch;
  /// Normal 3x3 branch only (the "KRM replaced by plain conv" ablation).
  bool plain = false;

  bool has_expand() const { return !plain && expanded > 0; }
  std::size_t edge_count() const { return plain ? 0 : edge_bank(edge).size(); }
  EdgeBank bank() const { return plain ? edge_bank(EdgeOperator::none) : edge_bank(edge); }
};

/// One directional branch: 1x1 channel mixing, then the fixed kernel scaled per channel.
template <class V>
struct EdgeBranch {
  ConvParams<V> pre{};
  V scale{};  // (C,1,1,1)
  V bias{};   // (C,1,1,1)
};

template <class V>
struct KrmParams {
  KrmLayout layout{};
  ConvParams<V> normal{};
  ConvParams<V> expand{};
  ConvParams<V> squeeze{};
  std::vector<EdgeBranch<V>> branches;
  /// Frozen operator bank, (branches, 1, 3, 3). Never trained.
  V kernels{};
};

template <typename T>
using KrmWeights = KrmParams<Tensor4<T>>;

template <typename T>
struct FusedConv {
  ConvKernel<T> kernel;

  std::size_t channels() const { return kernel.weight.n(); }
  std::size_t param_count() const { return kernel.weight.size() + kernel.bias.size(); }
};

/// Zero-valued weights with every shape set from the layout.
template <typename T>
KrmWeights<T> make_krm(const KrmLayout& layout) {
  const std::size_t C = layout.channels, D = layout.expanded;
  require(C > 0, "KRM needs at least one channel");
  KrmWeights<T> w;
  w.layout = layout;
  w.normal = make_conv<T>(C, C, 3);
  if (layout.has_expand()) {
    w.expand = make_conv<T>(D, C, 1);
    w.squeeze = make_conv<T>(C, D, 3);
  }
  const EdgeBank bank = layout.bank();
  w.kernels = bank_tensor<T>(bank);
  w.branches.resize(bank.size());
  for (auto& b : w.branches) {
    b.pre = make_conv<T>(C, C, 1);
    b.scale = Tensor4<T>(vec_shape(C));
    b.bias = Tensor4<T>(vec_shape(C));
  }
  return w;
}

/// Scalar parameters of the training form (the frozen bank is not counted).
inline std::size_t krm_param_count(const KrmLayout& l) {
  const std::size_t C = l.channels, D = l.expanded;
  std::size_t n = C * C * 9 + C;
  if (l.plain) return n;
  if (l.has_expand()) n += C * D + D + D * C * 9 + C;
  n += l.edge_count() * (C * C + C + 2 * C);
  return n;
}

inline std::size_t fused_param_count(std::size_t channels) { return channels * channels * 9 + channels; }

/// Multiply-accumulates per output pixel for one sample.
inline std::size_t krm_macs_per_pixel(const KrmLayout& l) {
  const std::size_t C = l.channels, D = l.expanded;
  std::size_t m = C * C * 9;
  if (l.plain) return m;
  if (l.has_expand()) m += C * D + D * C * 9;
  m += l.edge_count() * (C * C + C * 9);
  return m;
}

inline std::size_t fused_macs_per_pixel(std::size_t channels) { return channels * channels * 9; }

/// Training-form forward written against an execution engine. Two-stage
/// branches pad their intermediate with its own bias before the 3x3 stage.
template <class E>
typename E::Value krm_forward(E& e, const typename E::Value& x, const KrmParams<typename E::Value>& w) {
  using V = typename E::Value;
  const std::size_t C = w.layout.channels;
  if (e.shape(x).c != C)
    throw ShapeError("KRM expects " + std::to_string(C) + " channels, input is " + e.shape(x).str());
  V out = conv_same(e, x, w.normal.weight, w.normal.bias_ptr());
  if (w.layout.has_expand()) {
    V mid = e.conv(x, w.expand.weight, w.expand.bias_ptr());
    out = e.add(out, conv_same(e, mid, w.squeeze.weight, w.squeeze.bias_ptr(), &w.expand.bias));
  }
  for (std::size_t i = 0; i < w.branches.size(); ++i) {
    const Tensor4<typename E::Scalar>& bank = e.value(w.kernels);
    const auto& b = w.branches[i];
    V mid = e.conv(x, b.pre.weight, b.pre.bias_ptr());
    V kernel = e.mul(b.scale, e.constant(bank_kernel(bank, i)));
    out = e.add(out, depthwise_same(e, mid, kernel, &b.bias, &b.pre.bias));
  }
  return out;
}

template <typename T>
Tensor4<T> krm_forward_training(const Tensor4<T>& x, const KrmWeights<T>& w) {
  Eager<T> e;
  return krm_forward(e, x, w);
}

/// Collapses a 1x1 expansion followed by a 3x3 squeeze into one 3x3 conv.
template <typename T>
ConvKernel<T> fuse_expand_squeeze(const ConvKernel<T>& expand, const ConvKernel<T>& squeeze) {
  const Shape e = expand.weight.shape(), s = squeeze.weight.shape();
  if (e.h != 1 || e.w != 1) throw ShapeError("fuse_expand_squeeze: expand must be 1x1, got " + e.str());
  if (s.c != e.n)
    throw ShapeError("fuse_expand_squeeze: squeeze takes " + std::to_string(s.c) + " channels, expand makes " +
                     std::to_string(e.n));
  const std::size_t C = e.c, D = e.n, O = s.n, K = s.h * s.w;
  ConvKernel<T> f = make_conv<T>(O, C, s.h);
  for (std::size_t o = 0; o < O; ++o) {
    T b = squeeze.has_bias ? squeeze.bias[o] : T(0);
    for (std::size_t d = 0; d < D; ++d) {
      const T* ws = squeeze.weight.plane(o, d);
      const T be = expand.has_bias ? expand.bias[d] : T(0);
      for (std::size_t c = 0; c < C; ++c) {
        const T we = expand.weight(d, c, 0, 0);
        T* wf = f.weight.plane(o, c);
        for (std::size_t k = 0; k < K; ++k) wf[k] += ws[k] * we;
      }
      for (std::size_t k = 0; k < K; ++k) b += ws[k] * be;
    }
    f.bias[o] = b;
  }
  return f;
}

/// Collapses a 1x1 mixing conv followed by the depthwise kernel scale[o]*kernel
/// (plus bias) into one dense 3x3 conv.
template <typename T>
ConvKernel<T> fuse_kirsch_branch(const ConvKernel<T>& pre, std::span<const T> scale, const Tensor4<T>& kernel,
                                 std::span<const T> bias) {
  const Shape p = pre.weight.shape();
  if (p.h != 1 || p.w != 1 || p.n != p.c)
    throw ShapeError("fuse_kirsch_branch: pre must be a square 1x1 conv, got " + p.str());
  if (kernel.size() != 9) throw ShapeError("fuse_kirsch_branch: kernel must be 3x3, got " + kernel.shape().str());
  const std::size_t C = p.n;
  kernels::check_len(scale.size(), C, "fuse_kirsch_branch scale");
  kernels::check_len(bias.size(), C, "fuse_kirsch_branch bias");
  const T* K = kernel.data();
  T ksum = 0;
  for (std::size_t k = 0; k < 9; ++k) ksum += K[k];
  ConvKernel<T> f = make_conv<T>(C, C, 3);
  for (std::size_t o = 0; o < C; ++o) {
    for (std::size_t c = 0; c < C; ++c) {
      const T a = scale[o] * pre.weight(o, c, 0, 0);
      T* wf = f.weight.plane(o, c);
      for (std::size_t k = 0; k < 9; ++k) wf[k] = a * K[k];
    }
    const T bi = pre.has_bias ? pre.bias[o] : T(0);
    f.bias[o] = bias[o] + scale[o] * ksum * bi;
  }
  return f;
}

template <typename T>
void accumulate_into(ConvKernel<T>& acc, const ConvKernel<T>& k) {
  require(acc.weight.shape() == k.weight.shape(), "fusion: branch kernel shapes disagree");
  for (std::size_t i = 0; i < acc.weight.size(); ++i) acc.weight[i] += k.weight[i];
  if (k.has_bias)
    for (std::size_t i = 0; i < acc.bias.size(); ++i) acc.bias[i] += k.bias[i];
}

template <typename T>
FusedConv<T> fuse_krm(const KrmWeights<T>& w) {
  const std::size_t C = w.layout.channels;
  require(w.normal.weight.shape() == Shape{C, C, 3, 3}, "fuse_krm: normal branch must be CxCx3x3");
  FusedConv<T> f{make_conv<T>(C, C, 3)};
  accumulate_into(f.kernel, w.normal);
  if (w.layout.has_expand()) accumulate_into(f.kernel, fuse_expand_squeeze(w.expand, w.squeeze));
  for (std::size_t i = 0; i < w.branches.size(); ++i) {
    const auto& b = w.branches[i];
    accumulate_into(f.kernel, fuse_kirsch_branch(b.pre, b.scale.values(), bank_kernel(w.kernels, i), b.bias.values()));
  }
  return f;
}

template <typename T>
Tensor4<T> krm_forward_fused(const Tensor4<T>& x, const FusedConv<T>& f) {
  return conv2d(x, f.kernel);
}

}  // namespace eranet
