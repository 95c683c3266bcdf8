#pragma once

#include <functional>
#include <vector>

#include "eranet/ops.hpp"
#include "eranet/tensor.hpp"

namespace eranet {

/// Direct execution engine over plain tensors. Mirrors the op vocabulary of
/// Taped so network code can be written once against either.
template <typename T>
class Eager {
 public:
  using Scalar = T;
  using Value = Tensor4<T>;
  static constexpr bool records = false;

  Shape shape(const Value& v) const { return v.shape(); }
  const Tensor4<T>& value(const Value& v) const { return v; }
  Value constant(Tensor4<T> v) const { return v; }

  Value pad(const Value& x, std::size_t margin, const Value* values) const {
    return kernels::pad_constant(x, margin, values ? values->values() : std::span<const T>{});
  }
  Value crop(const Value& x, std::size_t margin) const { return kernels::crop(x, margin); }
  Value conv(const Value& x, const Value& w, const Value* b) const {
    return kernels::conv_valid(x, w, b ? b->values() : std::span<const T>{});
  }
  Value depthwise(const Value& x, const Value& w, const Value* b) const {
    return kernels::depthwise_valid(x, w, b ? b->values() : std::span<const T>{});
  }
  Value global_pool(const Value& x, PoolMode m) const { return kernels::global_pool(x, m); }
  Value channel_pool(const Value& x, PoolMode m) const { return kernels::channel_pool(x, m); }
  Value concat(const Value& a, const Value& b) const { return kernels::concat_channels(a, b); }
  Value prelu(const Value& x, const Value& slopes) const { return kernels::prelu(x, slopes.values()); }
  Value relu(const Value& x) const {
    return kernels::map(x, [](T v) { return v > 0 ? v : T(0); });
  }
  Value sigmoid(const Value& x) const { return kernels::sigmoid(x); }
  Value layer_norm(const Value& x, const Value& gain, const Value& shift, T eps, NormMode mode) const {
    return kernels::layer_norm(x, gain.values(), shift.values(), eps, mode);
  }
  Value clamp(const Value& x, T lo, T hi) const {
    return kernels::map(x, [lo, hi](T v) { return std::clamp(v, lo, hi); });
  }
  Value add(const Value& a, const Value& b) const { return kernels::zip(a, b, std::plus<T>{}, "add"); }
  Value sub(const Value& a, const Value& b) const { return kernels::zip(a, b, std::minus<T>{}, "sub"); }
  Value mul(const Value& a, const Value& b) const { return kernels::mul(a, b); }
  Value div(const Value& a, const Value& b) const { return kernels::zip(a, b, std::divides<T>{}, "div"); }
  Value scale(const Value& x, T alpha) const {
    return kernels::map(x, [alpha](T v) { return alpha * v; });
  }
  Value add_scalar(const Value& x, T alpha) const {
    return kernels::map(x, [alpha](T v) { return v + alpha; });
  }
  Value separable(const Value& x, const std::vector<T>& wy, const std::vector<T>& wx) const {
    return kernels::separable_valid<T>(x, wy, wx);
  }
  Value avg_pool2(const Value& x) const { return kernels::avg_pool2(x); }
  Value mean_per_sample(const Value& x) const { return kernels::mean_per_sample(x); }
  Value sum(const Value& x) const { return Value({1, 1, 1, 1}, kernels::sum(x)); }
  Value mean(const Value& x) const {
    require(x.size() > 0, "mean of empty tensor");
    return Value({1, 1, 1, 1}, kernels::sum(x) / static_cast<T>(x.size()));
  }
  Value pow_floor(const Value& x, T beta, T floor) const {
    return kernels::map(x, [beta, floor](T v) { return std::pow(std::max(v, floor), beta); });
  }
  Value abs(const Value& x) const {
    return kernels::map(x, [](T v) { return std::abs(v); });
  }
  Value rms(const Value& x) const {
    require(x.size() > 0, "rms of empty tensor");
    T ss = 0;
    for (T v : x.storage()) ss += v * v;
    return Value({1, 1, 1, 1}, std::sqrt(ss / static_cast<T>(x.size())));
  }
  Value diff(const Value& x, bool along_h) const { return kernels::diff(x, along_h); }
};

/// "Same"-size convolution: zero (or per-channel constant) padding of kh/2,
/// then a valid cross-correlation.
template <class E>
typename E::Value conv_same(E& e, const typename E::Value& x, const typename E::Value& w,
                            const typename E::Value* b, const typename E::Value* pad_values = nullptr) {
  const Shape k = e.shape(w);
  require(k.h == k.w && k.h % 2 == 1, "conv2d: kernel must be square and odd, got " + k.str());
  return e.conv(e.pad(x, k.h / 2, pad_values), w, b);
}

template <class E>
typename E::Value depthwise_same(E& e, const typename E::Value& x, const typename E::Value& w,
                                 const typename E::Value* b, const typename E::Value* pad_values = nullptr) {
  const Shape k = e.shape(w);
  require(k.h == k.w && k.h % 2 == 1, "depthwise_conv2d: kernel must be square and odd, got " + k.str());
  return e.depthwise(e.pad(x, k.h / 2, pad_values), w, b);
}

}  // namespace eranet
