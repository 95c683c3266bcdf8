#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "eranet/eager.hpp"
#include "eranet/log.hpp"
#include "eranet/tensor.hpp"

namespace eranet {

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
  std::size_t scales = 5;
  std::vector<double> beta{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  /// Lower bound applied before raising per-scale terms to fractional powers.
  double term_floor = 1e-6;

  double c1() const { return (k1 * peak) * (k1 * peak); }
  double c2() const { return (k2 * peak) * (k2 * peak); }
};

struct LossWeights {
  double ms_ssim = 0.85;
  double l1 = 0.15;
  double tv = 0.01;
};

/// Normalized Gaussian taps, truncated to `size` (centered).
template <typename T>
std::vector<T> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double mid = (static_cast<double>(size) - 1) / 2;
  double s = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - mid;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    s += g[i];
  }
  std::vector<T> out(size);
  for (std::size_t i = 0; i < size; ++i) out[i] = static_cast<T>(g[i] / s);
  return out;
}

/// Number of dyadic scales an h x w image supports, capped at `wanted`.
inline std::size_t supported_scales(std::size_t h, std::size_t w, std::size_t window, std::size_t wanted) {
  const double m = static_cast<double>(std::min(h, w));
  if (m < static_cast<double>(window)) return 1;
  const auto fit = static_cast<std::size_t>(std::floor(std::log2(m / static_cast<double>(window)))) + 1;
  return std::clamp<std::size_t>(fit, 1, wanted);
}

template <class V>
struct SsimMaps {
  V l;
  V cs;
};

/// Luminance and contrast-structure maps over Gaussian-windowed statistics
/// (valid filtering; the window is truncated to the image when larger).
template <class E>
SsimMaps<typename E::Value> ssim_maps(E& e, const typename E::Value& a, const typename E::Value& b,
                                      const SsimParams& p) {
  using T = typename E::Scalar;
  const Shape s = e.shape(a);
  if (s != e.shape(b)) throw ShapeError("ssim: shape mismatch " + s.str() + " vs " + e.shape(b).str());
  require(s.h > 0 && s.w > 0 && s.n > 0 && s.c > 0, "ssim: empty image " + s.str());
  const auto wy = gaussian_window<T>(std::min(p.window, s.h), p.sigma);
  const auto wx = gaussian_window<T>(std::min(p.window, s.w), p.sigma);
  auto blur = [&](const typename E::Value& v) { return e.separable(v, wy, wx); };
  const T c1 = static_cast<T>(p.c1()), c2 = static_cast<T>(p.c2());
  auto mu_a = blur(a), mu_b = blur(b);
  auto mu_aa = e.mul(mu_a, mu_a), mu_bb = e.mul(mu_b, mu_b), mu_ab = e.mul(mu_a, mu_b);
  auto var_a = e.sub(blur(e.mul(a, a)), mu_aa);
  auto var_b = e.sub(blur(e.mul(b, b)), mu_bb);
  auto cov = e.sub(blur(e.mul(a, b)), mu_ab);
  auto l = e.div(e.add_scalar(e.scale(mu_ab, T(2)), c1), e.add_scalar(e.add(mu_aa, mu_bb), c1));
  auto cs = e.div(e.add_scalar(e.scale(cov, T(2)), c2), e.add_scalar(e.add(var_a, var_b), c2));
  return {l, cs};
}

template <typename T>
struct SsimResult {
  T value = 0;
  Tensor4<T> l;
  Tensor4<T> cs;
};

template <typename T>
SsimResult<T> ssim(const Tensor4<T>& a, const Tensor4<T>& b, const SsimParams& p = {}) {
  Eager<T> e;
  auto m = ssim_maps(e, a, b, p);
  const auto prod = e.mul(m.l, m.cs);
  return {kernels::sum(prod) / static_cast<T>(prod.size()), std::move(m.l), std::move(m.cs)};
}

/// Scale exponents actually used for an image. A prefix of the list is
/// renormalized to sum to one, so a single scale gets exponent 1.
inline std::vector<double> effective_betas(const SsimParams& p, std::size_t h, std::size_t w) {
  if (p.scales == 0 || p.beta.size() < p.scales) throw ValueError("ms-ssim: need one exponent per scale");
  const std::size_t m = supported_scales(h, w, p.window, p.scales);
  std::vector<double> b(p.beta.begin(), p.beta.begin() + static_cast<std::ptrdiff_t>(m));
  if (m < p.beta.size()) {
    double s = 0;
    for (double v : b) s += v;
    for (double& v : b) v /= s;
  }
  if (m < p.scales)
    warn_once("ms-ssim: " + std::to_string(h) + "x" + std::to_string(w) + " image supports " + std::to_string(m) +
              " of " + std::to_string(p.scales) + " scales; exponents renormalized");
  return b;
}

/// 1 - prod_j cs_j^beta_j * (l cs)_M^beta_M, per image, averaged over the batch.
template <class E>
typename E::Value ms_ssim_loss(E& e, typename E::Value a, typename E::Value b, const SsimParams& p = {}) {
  using T = typename E::Scalar;
  const Shape s = e.shape(a);
  require(s.h > 0 && s.w > 0, "ms-ssim: empty image");
  const auto beta = effective_betas(p, s.h, s.w);
  const T floor = static_cast<T>(p.term_floor);
  typename E::Value prod{};
  for (std::size_t j = 0; j < beta.size(); ++j) {
    auto m = ssim_maps(e, a, b, p);
    const bool last = j + 1 == beta.size();
    auto v = e.mean_per_sample(last ? e.mul(m.l, m.cs) : m.cs);
    auto term = e.pow_floor(v, static_cast<T>(beta[j]), floor);
    prod = j == 0 ? term : e.mul(prod, term);
    if (!last) {
      a = e.avg_pool2(a);
      b = e.avg_pool2(b);
    }
  }
  return e.add_scalar(e.scale(e.mean(prod), T(-1)), T(1));
}

template <class E>
typename E::Value l1_loss(E& e, const typename E::Value& a, const typename E::Value& b) {
  return e.mean(e.abs(e.sub(a, b)));
}

/// Root-mean-square forward differences along h plus along w.
template <class E>
typename E::Value tv_loss(E& e, const typename E::Value& x) {
  const Shape s = e.shape(x);
  if (s.h < 2 || s.w < 2) throw ShapeError("tv_loss: need h, w >= 2, got " + s.str());
  return e.add(e.rms(e.diff(x, true)), e.rms(e.diff(x, false)));
}

template <class V>
struct LossTerms {
  V total;
  V ms_ssim;
  V l1;
  V tv;
};

template <class E>
LossTerms<typename E::Value> total_loss(E& e, const typename E::Value& out, const typename E::Value& target,
                                        const LossWeights& w = {}, const SsimParams& p = {}) {
  using T = typename E::Scalar;
  LossTerms<typename E::Value> r;
  r.ms_ssim = ms_ssim_loss(e, out, target, p);
  r.l1 = l1_loss(e, out, target);
  r.tv = tv_loss(e, out);
  r.total = e.add(e.add(e.scale(r.ms_ssim, static_cast<T>(w.ms_ssim)), e.scale(r.l1, static_cast<T>(w.l1))),
                  e.scale(r.tv, static_cast<T>(w.tv)));
  return r;
}

/// Plain-tensor conveniences returning scalars.
template <typename T>
T ms_ssim_loss(const Tensor4<T>& a, const Tensor4<T>& b, const SsimParams& p = {}) {
  Eager<T> e;
  return ms_ssim_loss(e, a, b, p)[0];
}

template <typename T>
T l1_loss(const Tensor4<T>& a, const Tensor4<T>& b) {
  Eager<T> e;
  return l1_loss(e, a, b)[0];
}

template <typename T>
T tv_loss(const Tensor4<T>& x) {
  Eager<T> e;
  return tv_loss(e, x)[0];
}

template <typename T>
LossTerms<T> total_loss(const Tensor4<T>& out, const Tensor4<T>& target, const LossWeights& w = {},
                        const SsimParams& p = {}) {
  Eager<T> e;
  auto r = total_loss(e, out, target, w, p);
  return {r.total[0], r.ms_ssim[0], r.l1[0], r.tv[0]};
}

/// Weighted sum of precomputed term values.
inline double combine_terms(const LossWeights& w, double ms_ssim, double l1, double tv) {
  return w.ms_ssim * ms_ssim + w.l1 * l1 + w.tv * tv;
}

/// Decibels; identical inputs give +infinity.
template <typename T>
double psnr(const Tensor4<T>& a, const Tensor4<T>& b, double peak = 1.0) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  require(a.size() > 0, "psnr: empty image");
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

inline std::string format_metric(double v, int precision = 6) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace eranet
