#pragma once

// Forward and adjoint kernels over Tensor4. Everything here is a pure function
// of its arguments; the autograd layer and the eager engine both call into it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "eranet/tensor.hpp"

namespace eranet {

enum class PoolMode { avg, max };

/// Normalization extent for layer_norm_channel.
enum class NormMode {
  per_channel,  ///< statistics over (h, w) for each (sample, channel)
  per_sample,   ///< statistics over (c, h, w) for each sample
};

namespace kernels {

inline void check_len(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw ShapeError(std::string(what) + ": expected length " + std::to_string(want) + ", got " +
                     std::to_string(got));
}

// ---------------------------------------------------------------- padding

template <typename T>
Tensor4<T> pad_constant(const Tensor4<T>& x, std::size_t margin, std::span<const T> values) {
  const Shape s = x.shape();
  if (!values.empty()) check_len(values.size(), s.c, "pad_channel_constant values");
  if (margin == 0) return x;
  const std::size_t H = s.h + 2 * margin, W = s.w + 2 * margin;
  Tensor4<T> out({s.n, s.c, H, W});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      T* o = out.plane(n, c);
      std::fill(o, o + H * W, values.empty() ? T{0} : values[c]);
      const T* in = x.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y)
        std::copy(in + y * s.w, in + (y + 1) * s.w, o + (y + margin) * W + margin);
    }
  return out;
}

template <typename T>
Tensor4<T> crop(const Tensor4<T>& x, std::size_t margin) {
  const Shape s = x.shape();
  if (margin == 0) return x;
  require(s.h > 2 * margin && s.w > 2 * margin, "crop: margin too large for " + s.str());
  const std::size_t H = s.h - 2 * margin, W = s.w - 2 * margin;
  Tensor4<T> out({s.n, s.c, H, W});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = x.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t y = 0; y < H; ++y)
        std::copy(in + (y + margin) * s.w + margin, in + (y + margin) * s.w + margin + W, o + y * W);
    }
  return out;
}

/// Gradient of pad_constant w.r.t. the per-channel fill values: border sums.
template <typename T>
void pad_constant_values_grad(const Tensor4<T>& gout, std::size_t margin, std::span<T> gvalues) {
  const Shape s = gout.shape();
  const std::size_t h = s.h - 2 * margin, w = s.w - 2 * margin;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* g = gout.plane(n, c);
      T acc = 0;
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const bool interior = y >= margin && y < margin + h && x >= margin && x < margin + w;
          if (!interior) acc += g[y * s.w + x];
        }
      gvalues[c] += acc;
    }
}

// ---------------------------------------------------------------- convolution

/// Valid (unpadded) stride-1 cross-correlation. weight (oc, ic, kh, kw).
template <typename T>
Tensor4<T> conv_valid(const Tensor4<T>& x, const Tensor4<T>& weight, std::span<const T> bias) {
  const Shape s = x.shape(), k = weight.shape();
  if (k.c != s.c)
    throw ShapeError("conv2d: kernel expects " + std::to_string(k.c) + " input channels, got " +
                     std::to_string(s.c));
  require(s.h >= k.h && s.w >= k.w && s.h > 0 && s.w > 0,
          "conv2d: spatial extent " + s.str() + " smaller than kernel " + k.str());
  if (!bias.empty()) check_len(bias.size(), k.n, "conv2d bias");
  const std::size_t H = s.h - k.h + 1, W = s.w - k.w + 1;
  Tensor4<T> out({s.n, k.n, H, W});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t oc = 0; oc < k.n; ++oc) {
      T* o = out.plane(n, oc);
      std::fill(o, o + H * W, bias.empty() ? T{0} : bias[oc]);
      for (std::size_t ic = 0; ic < s.c; ++ic) {
        const T* in = x.plane(n, ic);
        const T* wk = weight.plane(oc, ic);
        for (std::size_t ky = 0; ky < k.h; ++ky)
          for (std::size_t kx = 0; kx < k.w; ++kx) {
            const T wv = wk[ky * k.w + kx];
            for (std::size_t y = 0; y < H; ++y) {
              const T* irow = in + (y + ky) * s.w + kx;
              T* orow = o + y * W;
              for (std::size_t xx = 0; xx < W; ++xx) orow[xx] += wv * irow[xx];
            }
          }
      }
    }
  return out;
}

template <typename T>
Tensor4<T> conv_valid_input_grad(const Tensor4<T>& gout, const Tensor4<T>& weight, Shape in_shape) {
  const Shape g = gout.shape(), k = weight.shape();
  Tensor4<T> gx(in_shape);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oc = 0; oc < g.c; ++oc) {
      const T* go = gout.plane(n, oc);
      for (std::size_t ic = 0; ic < in_shape.c; ++ic) {
        T* gi = gx.plane(n, ic);
        const T* wk = weight.plane(oc, ic);
        for (std::size_t ky = 0; ky < k.h; ++ky)
          for (std::size_t kx = 0; kx < k.w; ++kx) {
            const T wv = wk[ky * k.w + kx];
            for (std::size_t y = 0; y < g.h; ++y) {
              T* irow = gi + (y + ky) * in_shape.w + kx;
              const T* grow = go + y * g.w;
              for (std::size_t xx = 0; xx < g.w; ++xx) irow[xx] += wv * grow[xx];
            }
          }
      }
    }
  return gx;
}

namespace detail {
/// Correlates one gradient plane with one input plane into per-tap partial
/// rows (part has kh*kw rows of width gw), keeping the inner loop elementwise.
template <typename T>
void tap_partials(const T* go, const T* in, Shape g, std::size_t in_w, std::size_t kh, std::size_t kw, T* part) {
  for (std::size_t y = 0; y < g.h; ++y) {
    const T* grow = go + y * g.w;
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* irow = in + (y + ky) * in_w + kx;
        T* p = part + (ky * kw + kx) * g.w;
        for (std::size_t xx = 0; xx < g.w; ++xx) p[xx] += grow[xx] * irow[xx];
      }
  }
}
}  // namespace detail

template <typename T>
void conv_valid_weight_grad(const Tensor4<T>& gout, const Tensor4<T>& x, Tensor4<T>& gw) {
  const Shape g = gout.shape(), s = x.shape(), k = gw.shape();
  const std::size_t taps = k.h * k.w;
  std::vector<T> part(taps * g.w);
  for (std::size_t oc = 0; oc < k.n; ++oc)
    for (std::size_t ic = 0; ic < k.c; ++ic) {
      std::fill(part.begin(), part.end(), T(0));
      for (std::size_t n = 0; n < g.n; ++n)
        detail::tap_partials(gout.plane(n, oc), x.plane(n, ic), g, s.w, k.h, k.w, part.data());
      T* dst = gw.plane(oc, ic);
      for (std::size_t t = 0; t < taps; ++t) {
        T acc = 0;
        for (std::size_t xx = 0; xx < g.w; ++xx) acc += part[t * g.w + xx];
        dst[t] += acc;
      }
    }
}

/// Per-channel sum over (n, h, w); the bias gradient of conv and depthwise conv.
template <typename T>
void channel_sum_grad(const Tensor4<T>& gout, std::span<T> gb) {
  const Shape g = gout.shape();
  for (std::size_t c = 0; c < g.c; ++c) {
    T acc = 0;
    for (std::size_t n = 0; n < g.n; ++n) {
      const T* p = gout.plane(n, c);
      for (std::size_t i = 0; i < g.plane(); ++i) acc += p[i];
    }
    gb[c] += acc;
  }
}

/// Valid depthwise cross-correlation. weight (c, 1, kh, kw).
template <typename T>
Tensor4<T> depthwise_valid(const Tensor4<T>& x, const Tensor4<T>& weight, std::span<const T> bias) {
  const Shape s = x.shape(), k = weight.shape();
  if (k.n != s.c || k.c != 1)
    throw ShapeError("depthwise_conv2d: kernel " + k.str() + " incompatible with input " + s.str());
  require(s.h >= k.h && s.w >= k.w, "depthwise_conv2d: input smaller than kernel");
  if (!bias.empty()) check_len(bias.size(), s.c, "depthwise_conv2d bias");
  const std::size_t H = s.h - k.h + 1, W = s.w - k.w + 1;
  Tensor4<T> out({s.n, s.c, H, W});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      T* o = out.plane(n, c);
      std::fill(o, o + H * W, bias.empty() ? T{0} : bias[c]);
      const T* in = x.plane(n, c);
      const T* wk = weight.plane(c, 0);
      for (std::size_t ky = 0; ky < k.h; ++ky)
        for (std::size_t kx = 0; kx < k.w; ++kx) {
          const T wv = wk[ky * k.w + kx];
          for (std::size_t y = 0; y < H; ++y) {
            const T* irow = in + (y + ky) * s.w + kx;
            T* orow = o + y * W;
            for (std::size_t xx = 0; xx < W; ++xx) orow[xx] += wv * irow[xx];
          }
        }
    }
  return out;
}

template <typename T>
Tensor4<T> depthwise_valid_input_grad(const Tensor4<T>& gout, const Tensor4<T>& weight, Shape in_shape) {
  const Shape g = gout.shape(), k = weight.shape();
  Tensor4<T> gx(in_shape);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t c = 0; c < g.c; ++c) {
      const T* go = gout.plane(n, c);
      T* gi = gx.plane(n, c);
      const T* wk = weight.plane(c, 0);
      for (std::size_t ky = 0; ky < k.h; ++ky)
        for (std::size_t kx = 0; kx < k.w; ++kx) {
          const T wv = wk[ky * k.w + kx];
          for (std::size_t y = 0; y < g.h; ++y) {
            T* irow = gi + (y + ky) * in_shape.w + kx;
            const T* grow = go + y * g.w;
            for (std::size_t xx = 0; xx < g.w; ++xx) irow[xx] += wv * grow[xx];
          }
        }
    }
  return gx;
}

template <typename T>
void depthwise_valid_weight_grad(const Tensor4<T>& gout, const Tensor4<T>& x, Tensor4<T>& gw) {
  const Shape g = gout.shape(), s = x.shape(), k = gw.shape();
  const std::size_t taps = k.h * k.w;
  std::vector<T> part(taps * g.w);
  for (std::size_t c = 0; c < k.n; ++c) {
    std::fill(part.begin(), part.end(), T(0));
    for (std::size_t n = 0; n < g.n; ++n)
      detail::tap_partials(gout.plane(n, c), x.plane(n, c), g, s.w, k.h, k.w, part.data());
    T* dst = gw.plane(c, 0);
    for (std::size_t t = 0; t < taps; ++t) {
      T acc = 0;
      for (std::size_t xx = 0; xx < g.w; ++xx) acc += part[t * g.w + xx];
      dst[t] += acc;
    }
  }
}

// ---------------------------------------------------------------- pooling

template <typename T>
Tensor4<T> global_pool(const Tensor4<T>& x, PoolMode mode) {
  const Shape s = x.shape();
  require(s.plane() >= 1, "global_pool_spatial: empty spatial extent");
  Tensor4<T> out({s.n, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      if (mode == PoolMode::avg) {
        T acc = 0;
        for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
        out(n, c, 0, 0) = acc / static_cast<T>(s.plane());
      } else {
        out(n, c, 0, 0) = *std::max_element(p, p + s.plane());
      }
    }
  return out;
}

template <typename T>
Tensor4<T> global_pool_grad(const Tensor4<T>& gout, const Tensor4<T>& x, PoolMode mode) {
  const Shape s = x.shape();
  Tensor4<T> gx(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T g = gout(n, c, 0, 0);
      T* gp = gx.plane(n, c);
      if (mode == PoolMode::avg) {
        const T v = g / static_cast<T>(s.plane());
        for (std::size_t i = 0; i < s.plane(); ++i) gp[i] = v;
      } else {
        const T* p = x.plane(n, c);
        gp[std::max_element(p, p + s.plane()) - p] = g;
      }
    }
  return gx;
}

template <typename T>
Tensor4<T> channel_pool(const Tensor4<T>& x, PoolMode mode) {
  const Shape s = x.shape();
  require(s.c >= 1, "pool_over_channels: no channels");
  Tensor4<T> out({s.n, 1, s.h, s.w});
  const std::size_t P = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    T* o = out.plane(n, 0);
    std::copy(x.plane(n, 0), x.plane(n, 0) + P, o);
    for (std::size_t c = 1; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      if (mode == PoolMode::avg)
        for (std::size_t i = 0; i < P; ++i) o[i] += p[i];
      else
        for (std::size_t i = 0; i < P; ++i) o[i] = std::max(o[i], p[i]);
    }
    if (mode == PoolMode::avg)
      for (std::size_t i = 0; i < P; ++i) o[i] /= static_cast<T>(s.c);
  }
  return out;
}

template <typename T>
Tensor4<T> channel_pool_grad(const Tensor4<T>& gout, const Tensor4<T>& x, PoolMode mode) {
  const Shape s = x.shape();
  const std::size_t P = s.plane();
  Tensor4<T> gx(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* g = gout.plane(n, 0);
    if (mode == PoolMode::avg) {
      for (std::size_t c = 0; c < s.c; ++c) {
        T* gp = gx.plane(n, c);
        for (std::size_t i = 0; i < P; ++i) gp[i] = g[i] / static_cast<T>(s.c);
      }
    } else {
      for (std::size_t i = 0; i < P; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < s.c; ++c)
          if (x.plane(n, c)[i] > x.plane(n, best)[i]) best = c;
        gx.plane(n, best)[i] = g[i];
      }
    }
  }
  return gx;
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
          "concat: incompatible " + sa.str() + " and " + sb.str());
  Tensor4<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t P = sa.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy(a.plane(n, 0), a.plane(n, 0) + sa.c * P, out.plane(n, 0));
    std::copy(b.plane(n, 0), b.plane(n, 0) + sb.c * P, out.plane(n, sa.c));
  }
  return out;
}

/// Channels [first, first + count) of x.
template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, std::size_t first, std::size_t count) {
  const Shape s = x.shape();
  Tensor4<T> out({s.n, count, s.h, s.w});
  const std::size_t P = s.plane();
  for (std::size_t n = 0; n < s.n; ++n)
    std::copy(x.plane(n, first), x.plane(n, first) + count * P, out.plane(n, 0));
  return out;
}

template <typename T>
Tensor4<T> avg_pool2(const Tensor4<T>& x) {
  const Shape s = x.shape();
  require(s.h >= 2 && s.w >= 2, "avg_pool2: input too small " + s.str());
  const std::size_t H = s.h / 2, W = s.w / 2;
  Tensor4<T> out({s.n, s.c, H, W});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          o[y * W + xx] = T(0.25) * (p[2 * y * s.w + 2 * xx] + p[2 * y * s.w + 2 * xx + 1] +
                                     p[(2 * y + 1) * s.w + 2 * xx] + p[(2 * y + 1) * s.w + 2 * xx + 1]);
    }
  return out;
}

template <typename T>
Tensor4<T> avg_pool2_grad(const Tensor4<T>& gout, Shape in_shape) {
  Tensor4<T> gx(in_shape);
  const Shape g = gout.shape();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t c = 0; c < g.c; ++c) {
      const T* go = gout.plane(n, c);
      T* gp = gx.plane(n, c);
      for (std::size_t y = 0; y < g.h; ++y)
        for (std::size_t xx = 0; xx < g.w; ++xx) {
          const T v = T(0.25) * go[y * g.w + xx];
          gp[2 * y * in_shape.w + 2 * xx] = v;
          gp[2 * y * in_shape.w + 2 * xx + 1] = v;
          gp[(2 * y + 1) * in_shape.w + 2 * xx] = v;
          gp[(2 * y + 1) * in_shape.w + 2 * xx + 1] = v;
        }
    }
  return gx;
}

// ---------------------------------------------------------------- activations

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
  return y;
}

template <typename T>
Tensor4<T> prelu(const Tensor4<T>& x, std::span<const T> slopes) {
  const Shape s = x.shape();
  check_len(slopes.size(), s.c, "prelu slopes");
  Tensor4<T> y(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      T* o = y.plane(n, c);
      const T a = slopes[c];
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = p[i] >= 0 ? p[i] : a * p[i];
    }
  return y;
}

template <typename T>
Tensor4<T> prelu_grad(const Tensor4<T>& gout, const Tensor4<T>& x, std::span<const T> slopes,
                      std::span<T> gslopes) {
  const Shape s = x.shape();
  Tensor4<T> gx(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      const T* g = gout.plane(n, c);
      T* gp = gx.plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) {
        if (p[i] >= 0) {
          gp[i] = g[i];
        } else {
          gp[i] = slopes[c] * g[i];
          acc += g[i] * p[i];
        }
      }
      if (!gslopes.empty()) gslopes[c] += acc;
    }
  return gx;
}

// ---------------------------------------------------------------- normalization

struct NormGroups {
  std::size_t groups, group_size, channels_per_group;
};

inline NormGroups norm_groups(Shape s, NormMode mode) {
  if (mode == NormMode::per_channel) return {s.n * s.c, s.plane(), 1};
  return {s.n, s.c * s.plane(), s.c};
}

/// Returns y; also writes normalized values and per-group inverse std for backward.
template <typename T>
Tensor4<T> layer_norm(const Tensor4<T>& x, std::span<const T> gain, std::span<const T> shift, T eps,
                      NormMode mode, Tensor4<T>* xhat_out = nullptr, std::vector<T>* inv_std_out = nullptr) {
  const Shape s = x.shape();
  check_len(gain.size(), s.c, "layer_norm gain");
  check_len(shift.size(), s.c, "layer_norm shift");
  if (!(eps > 0)) throw ValueError("layer_norm: epsilon must be positive");
  const auto [groups, gsize, cpg] = norm_groups(s, mode);
  require(gsize > 0, "layer_norm: empty group");
  Tensor4<T> y(s), xhat(s);
  std::vector<T> inv_std(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const T* p = x.data() + g * gsize;
    T mean = 0;
    for (std::size_t i = 0; i < gsize; ++i) mean += p[i];
    mean /= static_cast<T>(gsize);
    T var = 0;
    for (std::size_t i = 0; i < gsize; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<T>(gsize);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[g] = is;
    T* xh = xhat.data() + g * gsize;
    T* o = y.data() + g * gsize;
    for (std::size_t i = 0; i < gsize; ++i) {
      const std::size_t c = mode == NormMode::per_channel ? g % s.c : i / s.plane();
      xh[i] = (p[i] - mean) * is;
      o[i] = gain[c] * xh[i] + shift[c];
    }
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  if (inv_std_out) *inv_std_out = std::move(inv_std);
  return y;
}

template <typename T>
Tensor4<T> layer_norm_grad(const Tensor4<T>& gout, const Tensor4<T>& xhat, const std::vector<T>& inv_std,
                           std::span<const T> gain, NormMode mode, std::span<T> ggain, std::span<T> gshift) {
  const Shape s = gout.shape();
  const auto [groups, gsize, cpg] = norm_groups(s, mode);
  Tensor4<T> gx(s);
  std::vector<T> gxh(gsize);
  for (std::size_t g = 0; g < groups; ++g) {
    const T* go = gout.data() + g * gsize;
    const T* xh = xhat.data() + g * gsize;
    T mean_g = 0, mean_gx = 0;
    for (std::size_t i = 0; i < gsize; ++i) {
      const std::size_t c = mode == NormMode::per_channel ? g % s.c : i / s.plane();
      gxh[i] = go[i] * gain[c];
      mean_g += gxh[i];
      mean_gx += gxh[i] * xh[i];
      if (!ggain.empty()) ggain[c] += go[i] * xh[i];
      if (!gshift.empty()) gshift[c] += go[i];
    }
    mean_g /= static_cast<T>(gsize);
    mean_gx /= static_cast<T>(gsize);
    T* gp = gx.data() + g * gsize;
    for (std::size_t i = 0; i < gsize; ++i) gp[i] = inv_std[g] * (gxh[i] - mean_g - xh[i] * mean_gx);
  }
  return gx;
}

// ---------------------------------------------------------------- broadcasting arithmetic

inline Shape broadcast_shape(Shape a, Shape b) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError("broadcast: incompatible " + a.str() + " and " + b.str());
  };
  return {dim(a.n, b.n), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
}

/// Calls f(out_index, a_index, b_index) for every element of the broadcast result.
template <typename F>
void broadcast_each(Shape out, Shape a, Shape b, F&& f) {
  auto stride = [](Shape s) {
    std::array<std::size_t, 4> st{s.c * s.h * s.w, s.h * s.w, s.w, 1};
    if (s.n == 1) st[0] = 0;
    if (s.c == 1) st[1] = 0;
    if (s.h == 1) st[2] = 0;
    if (s.w == 1) st[3] = 0;
    return st;
  };
  const auto sa = stride(a), sb = stride(b);
  std::size_t o = 0;
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t y = 0; y < out.h; ++y) {
        const std::size_t ia = n * sa[0] + c * sa[1] + y * sa[2];
        const std::size_t ib = n * sb[0] + c * sb[1] + y * sb[2];
        for (std::size_t x = 0; x < out.w; ++x, ++o) f(o, ia + x * sa[3], ib + x * sb[3]);
      }
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
  const Shape s = broadcast_shape(a.shape(), b.shape());
  Tensor4<T> out(s);
  broadcast_each(s, a.shape(), b.shape(), [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = a[i] * b[j]; });
  return out;
}

/// Adjoints of broadcasting multiply, reduced back onto each operand's shape.
template <typename T>
void mul_grad(const Tensor4<T>& gout, const Tensor4<T>& a, const Tensor4<T>& b, Tensor4<T>* ga, Tensor4<T>* gb) {
  broadcast_each(gout.shape(), a.shape(), b.shape(), [&](std::size_t o, std::size_t i, std::size_t j) {
    if (ga) (*ga)[i] += gout[o] * b[j];
    if (gb) (*gb)[j] += gout[o] * a[i];
  });
}

template <typename T, typename F>
Tensor4<T> zip(const Tensor4<T>& a, const Tensor4<T>& b, F&& f, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename T, typename F>
Tensor4<T> map(const Tensor4<T>& a, F&& f) {
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// ---------------------------------------------------------------- filtering and reductions

/// Separable depthwise valid filter: out = wy ⊗ wx applied to every plane.
template <typename T>
Tensor4<T> separable_valid(const Tensor4<T>& x, std::span<const T> wy, std::span<const T> wx) {
  const Shape s = x.shape();
  require(s.h >= wy.size() && s.w >= wx.size(), "separable filter larger than input " + s.str());
  const std::size_t H = s.h - wy.size() + 1, W = s.w - wx.size() + 1;
  Tensor4<T> out({s.n, s.c, H, W});
  std::vector<T> tmp(s.h * W);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          T acc = 0;
          for (std::size_t j = 0; j < wx.size(); ++j) acc += wx[j] * p[y * s.w + xx + j];
          tmp[y * W + xx] = acc;
        }
      T* o = out.plane(n, c);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          T acc = 0;
          for (std::size_t i = 0; i < wy.size(); ++i) acc += wy[i] * tmp[(y + i) * W + xx];
          o[y * W + xx] = acc;
        }
    }
  return out;
}

template <typename T>
Tensor4<T> separable_valid_grad(const Tensor4<T>& gout, std::span<const T> wy, std::span<const T> wx, Shape in_shape) {
  const Shape g = gout.shape();
  Tensor4<T> gx(in_shape);
  std::vector<T> tmp(in_shape.h * g.w);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t c = 0; c < g.c; ++c) {
      std::fill(tmp.begin(), tmp.end(), T{0});
      const T* go = gout.plane(n, c);
      for (std::size_t y = 0; y < g.h; ++y)
        for (std::size_t i = 0; i < wy.size(); ++i)
          for (std::size_t xx = 0; xx < g.w; ++xx) tmp[(y + i) * g.w + xx] += wy[i] * go[y * g.w + xx];
      T* gp = gx.plane(n, c);
      for (std::size_t y = 0; y < in_shape.h; ++y)
        for (std::size_t xx = 0; xx < g.w; ++xx)
          for (std::size_t j = 0; j < wx.size(); ++j) gp[y * in_shape.w + xx + j] += wx[j] * tmp[y * g.w + xx];
    }
  return gx;
}

template <typename T>
Tensor4<T> mean_per_sample(const Tensor4<T>& x) {
  const Shape s = x.shape();
  const std::size_t per = s.c * s.plane();
  require(per > 0, "mean_per_sample: empty sample");
  Tensor4<T> out({s.n, 1, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* p = x.data() + n * per;
    T acc = 0;
    for (std::size_t i = 0; i < per; ++i) acc += p[i];
    out[n] = acc / static_cast<T>(per);
  }
  return out;
}

template <typename T>
T sum(const Tensor4<T>& x) {
  T acc = 0;
  for (T v : x.storage()) acc += v;
  return acc;
}

/// Forward differences along h (rows) or w (columns).
template <typename T>
Tensor4<T> diff(const Tensor4<T>& x, bool along_h) {
  const Shape s = x.shape();
  require(along_h ? s.h >= 2 : s.w >= 2, "diff: degenerate size " + s.str());
  const Shape o{s.n, s.c, along_h ? s.h - 1 : s.h, along_h ? s.w : s.w - 1};
  Tensor4<T> out(o);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      T* q = out.plane(n, c);
      for (std::size_t y = 0; y < o.h; ++y)
        for (std::size_t xx = 0; xx < o.w; ++xx)
          q[y * o.w + xx] = along_h ? p[(y + 1) * s.w + xx] - p[y * s.w + xx] : p[y * s.w + xx + 1] - p[y * s.w + xx];
    }
  return out;
}

template <typename T>
Tensor4<T> diff_grad(const Tensor4<T>& gout, bool along_h, Shape in_shape) {
  const Shape o = gout.shape();
  Tensor4<T> gx(in_shape);
  for (std::size_t n = 0; n < o.n; ++n)
    for (std::size_t c = 0; c < o.c; ++c) {
      const T* g = gout.plane(n, c);
      T* gp = gx.plane(n, c);
      for (std::size_t y = 0; y < o.h; ++y)
        for (std::size_t xx = 0; xx < o.w; ++xx) {
          const T v = g[y * o.w + xx];
          if (along_h) {
            gp[(y + 1) * in_shape.w + xx] += v;
            gp[y * in_shape.w + xx] -= v;
          } else {
            gp[y * in_shape.w + xx + 1] += v;
            gp[y * in_shape.w + xx] -= v;
          }
        }
    }
  return gx;
}

}  // namespace kernels
}  // namespace eranet
