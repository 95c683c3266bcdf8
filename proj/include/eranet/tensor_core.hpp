#pragma once

#include <vector>

#include "eranet/autograd.hpp"
#include "eranet/eager.hpp"
#include "eranet/ops.hpp"
#include "eranet/tensor.hpp"

namespace eranet {

/// Weights (out, in, kh, kw) plus a per-output-channel bias stored as (out, 1, 1, 1).
/// V is Tensor4<T> for stored parameters or Var when bound to a tape.
template <class V>
struct ConvParams {
  V weight{};
  V bias{};
  bool has_bias = true;

  const V* bias_ptr() const { return has_bias ? &bias : nullptr; }
};

template <typename T>
using ConvKernel = ConvParams<Tensor4<T>>;

/// Depthwise kernels use the same container with weight shape (c, 1, kh, kw).
template <typename T>
using DepthwiseKernel = ConvParams<Tensor4<T>>;

/// Per-channel vectors (biases, slopes, gains) live in (c, 1, 1, 1) tensors.
inline Shape vec_shape(std::size_t c) { return {c, 1, 1, 1}; }

template <typename T>
ConvKernel<T> make_conv(std::size_t out, std::size_t in, std::size_t k, bool bias = true) {
  ConvKernel<T> p;
  p.weight = Tensor4<T>({out, in, k, k});
  p.bias = bias ? Tensor4<T>(vec_shape(out)) : Tensor4<T>();
  p.has_bias = bias;
  return p;
}

/// Border rule for same-size convolution.
template <typename T>
struct PadSpec {
  /// Empty means zero padding; otherwise one fill value per input channel.
  std::vector<T> values;

  static PadSpec zero() { return {}; }
  static PadSpec constant(std::vector<T> v) { return {std::move(v)}; }
};

template <typename T>
Tensor4<T> pad_channel_constant(const Tensor4<T>& x, std::size_t margin, std::span<const T> values) {
  kernels::check_len(values.size(), x.c(), "pad_channel_constant values");
  return kernels::pad_constant(x, margin, values);
}

template <typename T>
Tensor4<T> crop_center(const Tensor4<T>& x, std::size_t margin) {
  return kernels::crop(x, margin);
}

namespace detail {
template <typename T>
Tensor4<T> padded_for(const Tensor4<T>& x, const Tensor4<T>& w, const PadSpec<T>& pad) {
  const Shape k = w.shape();
  require(k.h == k.w && k.h % 2 == 1, "convolution kernel must be square and odd, got " + k.str());
  require(x.h() > 0 && x.w() > 0, "convolution: empty spatial dims " + x.shape().str());
  return kernels::pad_constant(x, k.h / 2, std::span<const T>(pad.values));
}
}  // namespace detail

/// Stride-1 same-size cross-correlation.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvKernel<T>& k, const PadSpec<T>& pad = {}) {
  if (k.weight.c() != x.c())
    throw ShapeError("conv2d: kernel expects " + std::to_string(k.weight.c()) + " channels, input has " +
                     std::to_string(x.c()));
  return kernels::conv_valid(detail::padded_for(x, k.weight, pad), k.weight,
                             k.has_bias ? k.bias.values() : std::span<const T>{});
}

template <typename T>
Tensor4<T> depthwise_conv2d(const Tensor4<T>& x, const DepthwiseKernel<T>& k, const PadSpec<T>& pad = {}) {
  if (k.weight.n() != x.c() || k.weight.c() != 1)
    throw ShapeError("depthwise_conv2d: kernel " + k.weight.shape().str() + " does not match input " + x.shape().str());
  return kernels::depthwise_valid(detail::padded_for(x, k.weight, pad), k.weight,
                                  k.has_bias ? k.bias.values() : std::span<const T>{});
}

template <typename T>
Tensor4<T> global_pool_spatial(const Tensor4<T>& x, PoolMode mode) {
  return kernels::global_pool(x, mode);
}

template <typename T>
Tensor4<T> pool_over_channels(const Tensor4<T>& x, PoolMode mode) {
  return kernels::channel_pool(x, mode);
}

template <typename T>
Tensor4<T> prelu(const Tensor4<T>& x, std::span<const T> slopes) {
  return kernels::prelu(x, slopes);
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  return kernels::sigmoid(x);
}

template <typename T>
Tensor4<T> layer_norm_channel(const Tensor4<T>& x, std::span<const T> gain, std::span<const T> shift,
                              T epsilon = T(1e-5), NormMode mode = NormMode::per_channel) {
  return kernels::layer_norm(x, gain, shift, epsilon, mode);
}

}  // namespace eranet
