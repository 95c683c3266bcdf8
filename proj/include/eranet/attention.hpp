#pragma once

#include <string>
#include <string_view>

#include "eranet/tensor_core.hpp"

namespace eranet {

/// Nonlinearity between the two shared MLP layers of channel attention.
enum class CamActivation { relu, identity };

inline std::string_view to_string(CamActivation a) { return a == CamActivation::relu ? "relu" : "identity"; }

inline CamActivation cam_activation_from(std::string_view s) {
  if (s == "relu") return CamActivation::relu;
  if (s == "identity") return CamActivation::identity;
  throw ValueError("unknown attention activation '" + std::string(s) + "'");
}

/// Bias-free 1x1 reduce/expand pair shared by the average and max paths.
template <class V>
struct CamParams {
  ConvParams<V> reduce{};
  ConvParams<V> expand{};
};

template <class V>
struct SamParams {
  ConvParams<V> conv7{};
};

template <typename T>
using CamWeights = CamParams<Tensor4<T>>;
template <typename T>
using SamWeights = SamParams<Tensor4<T>>;

template <typename T>
CamWeights<T> make_cam(std::size_t channels, std::size_t reduction) {
  if (reduction == 0 || channels % reduction != 0)
    throw ShapeError("channel attention: reduction " + std::to_string(reduction) + " does not divide " +
                     std::to_string(channels) + " channels");
  const std::size_t hidden = channels / reduction;
  return {make_conv<T>(hidden, channels, 1, false), make_conv<T>(channels, hidden, 1, false)};
}

template <typename T>
SamWeights<T> make_sam() {
  return {make_conv<T>(1, 2, 7)};
}

template <class E>
typename E::Value channel_attention(E& e, const typename E::Value& x, const CamParams<typename E::Value>& w,
                                    CamActivation act = CamActivation::relu) {
  using V = typename E::Value;
  if (e.shape(w.reduce.weight).c != e.shape(x).c)
    throw ShapeError("channel attention expects " + std::to_string(e.shape(w.reduce.weight).c) +
                     " channels, input is " + e.shape(x).str());
  auto mlp = [&](const V& v) {
    V h = e.conv(v, w.reduce.weight, w.reduce.bias_ptr());
    if (act == CamActivation::relu) h = e.relu(h);
    return e.conv(h, w.expand.weight, w.expand.bias_ptr());
  };
  return e.sigmoid(e.add(mlp(e.global_pool(x, PoolMode::avg)), mlp(e.global_pool(x, PoolMode::max))));
}

template <class E>
typename E::Value spatial_attention(E& e, const typename E::Value& x, const SamParams<typename E::Value>& w) {
  auto pooled = e.concat(e.channel_pool(x, PoolMode::avg), e.channel_pool(x, PoolMode::max));
  return e.sigmoid(conv_same(e, pooled, w.conv7.weight, w.conv7.bias_ptr()));
}

/// (n, C, 1, 1) map in (0, 1).
template <typename T>
Tensor4<T> channel_attention(const Tensor4<T>& x, const CamWeights<T>& w, CamActivation act = CamActivation::relu) {
  Eager<T> e;
  return channel_attention(e, x, w, act);
}

/// (n, 1, h, w) map in (0, 1).
template <typename T>
Tensor4<T> spatial_attention(const Tensor4<T>& x, const SamWeights<T>& w) {
  Eager<T> e;
  return spatial_attention(e, x, w);
}

}  // namespace eranet
