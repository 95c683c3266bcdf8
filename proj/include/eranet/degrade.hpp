#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eranet/rng.hpp"
#include "eranet/tensor.hpp"

namespace eranet {

enum class Scene { haze, rain, lowlight, mixed };

inline std::string_view to_string(Scene s) {
  switch (s) {
    case Scene::haze: return "haze";
    case Scene::rain: return "rain";
    case Scene::lowlight: return "lowlight";
    case Scene::mixed: return "mixed";
  }
  return "?";
}

inline Scene scene_from(std::string_view s) {
  for (auto v : {Scene::haze, Scene::rain, Scene::lowlight, Scene::mixed})
    if (to_string(v) == s) return v;
  throw ValueError("unknown scene '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- haze

struct HazeParams {
  enum class Transmission { constant, ramp, exponential };
  /// Atmospheric light per channel (a scalar is three equal entries).
  std::array<double, 3> airlight{0.95, 0.95, 0.95};
  Transmission kind = Transmission::ramp;
  double t = 0.6;
  double t_top = 0.4;
  double t_bottom = 0.9;
  /// exp(-beta * depth) with depth falling linearly from depth_far at the top row to 0 at the bottom.
  double beta = 1.0;
  double depth_far = 1.0;
};

/// Transmission of row y in an image of height h.
inline double transmission_at(const HazeParams& p, std::size_t y, std::size_t h) {
  const double f = h > 1 ? static_cast<double>(y) / static_cast<double>(h - 1) : 0.0;
  switch (p.kind) {
    case HazeParams::Transmission::constant: return p.t;
    case HazeParams::Transmission::ramp: return p.t_top + (p.t_bottom - p.t_top) * f;
    case HazeParams::Transmission::exponential: return std::exp(-p.beta * p.depth_far * (1.0 - f));
  }
  return 1.0;
}

/// J t + A (1 - t).
template <typename T>
Tensor4<T> make_haze(const Tensor4<T>& J, const HazeParams& p) {
  const Shape s = J.shape();
  if (s.c != 1 && s.c != 3) throw ShapeError("make_haze: expected 1 or 3 channels, got " + s.str());
  Tensor4<T> out(s);
  for (std::size_t y = 0; y < s.h; ++y) {
    const double t = transmission_at(p, y, s.h);
    if (!(t > 0.0 && t <= 1.0)) throw ValueError("make_haze: transmission " + std::to_string(t) + " outside (0, 1]");
  }
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double A = p.airlight[c];
      for (std::size_t y = 0; y < s.h; ++y) {
        const double t = transmission_at(p, y, s.h);
        for (std::size_t x = 0; x < s.w; ++x)
          out(n, c, y, x) = static_cast<T>(static_cast<double>(J(n, c, y, x)) * t + A * (1.0 - t));
      }
    }
  return out;
}

// ---------------------------------------------------------------- rain

struct RainParams {
  std::size_t count = 20;
  /// Degrees from vertical.
  double angle = 10.0;
  double length = 12.0;
  double width = 1.0;
  double intensity = 0.6;
  /// Linear brightness fade from head to tail of each streak.
  bool fade = false;
  std::uint64_t seed = 0;
};

struct Streak {
  double x0, y0, x1, y1;
};

/// Streak segments drawn from the parameters' seed, centers uniform over the image.
inline std::vector<Streak> rain_streaks(const RainParams& p, std::size_t h, std::size_t w) {
  Rng rng(p.seed);
  const double a = p.angle * std::numbers::pi / 180.0;
  const double dx = std::sin(a) * p.length / 2, dy = std::cos(a) * p.length / 2;
  std::vector<Streak> out;
  for (std::size_t i = 0; i < p.count; ++i) {
    const double cx = rng.uniform(0.0, static_cast<double>(w)) - 0.5;
    const double cy = rng.uniform(0.0, static_cast<double>(h)) - 0.5;
    out.push_back({cx - dx, cy - dy, cx + dx, cy + dy});
  }
  return out;
}

/// Rain layer S (one plane broadcast to every channel) for the given streaks.
template <typename T>
Tensor4<T> render_streaks(const std::vector<Streak>& streaks, const RainParams& p, Shape s) {
  Tensor4<T> S(s);
  std::vector<double> plane(s.plane(), 0.0);
  for (const auto& k : streaks) {
    const double vx = k.x1 - k.x0, vy = k.y1 - k.y0, len2 = vx * vx + vy * vy;
    const double reach = p.width / 2 + 1;
    const auto lo = [](double v) { return static_cast<long>(std::floor(v)); };
    const long xa = std::max(0L, lo(std::min(k.x0, k.x1) - reach)), xb = std::min<long>(s.w - 1, lo(std::max(k.x0, k.x1) + reach) + 1);
    const long ya = std::max(0L, lo(std::min(k.y0, k.y1) - reach)), yb = std::min<long>(s.h - 1, lo(std::max(k.y0, k.y1) + reach) + 1);
    for (long y = ya; y <= yb; ++y)
      for (long x = xa; x <= xb; ++x) {
        double u = len2 > 0 ? ((x - k.x0) * vx + (y - k.y0) * vy) / len2 : 0.0;
        u = std::clamp(u, 0.0, 1.0);
        const double px = k.x0 + u * vx - x, py = k.y0 + u * vy - y;
        const double cov = std::clamp(p.width / 2 + 0.5 - std::sqrt(px * px + py * py), 0.0, 1.0);
        const double v = cov * p.intensity * (p.fade ? 1.0 - u : 1.0);
        double& dst = plane[static_cast<std::size_t>(y) * s.w + static_cast<std::size_t>(x)];
        dst = std::max(dst, v);
      }
  }
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      std::transform(plane.begin(), plane.end(), S.plane(n, c), [](double v) { return static_cast<T>(v); });
  return S;
}

/// (clamp(O + S, 0, 1), S).
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> make_rain(const Tensor4<T>& O, const RainParams& p) {
  if (!(p.length > 0) || !(p.width > 0)) throw ValueError("make_rain: streak length and width must be positive");
  if (!(p.intensity > 0 && p.intensity <= 1)) throw ValueError("make_rain: intensity must be in (0, 1]");
  Tensor4<T> S = render_streaks<T>(rain_streaks(p, O.h(), O.w()), p, O.shape());
  Tensor4<T> I(O.shape());
  for (std::size_t i = 0; i < O.size(); ++i) I[i] = std::clamp(O[i] + S[i], T(0), T(1));
  return {std::move(I), std::move(S)};
}

// ---------------------------------------------------------------- low light

struct LowLightParams {
  enum class Illumination { constant, field };
  Illumination kind = Illumination::constant;
  double level = 0.25;
  double level_min = 0.1;
  double level_max = 0.4;
  /// Coarse grid size of the smooth random field.
  std::size_t grid = 4;
  std::uint64_t seed = 0;
};

/// Illumination map (1, 1, h, w).
inline Tensor4<double> illumination(const LowLightParams& p, std::size_t h, std::size_t w) {
  Tensor4<double> L({1, 1, h, w});
  if (p.kind == LowLightParams::Illumination::constant) {
    L.fill(p.level);
  } else {
    if (!(p.level_min < p.level_max)) throw ValueError("make_lowlight: level_min must be below level_max");
    const std::size_t g = std::max<std::size_t>(p.grid, 2);
    Rng rng(p.seed);
    std::vector<double> coarse(g * g);
    for (auto& v : coarse) v = rng.uniform(p.level_min, p.level_max);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double fy = h > 1 ? static_cast<double>(y) * (g - 1) / static_cast<double>(h - 1) : 0.0;
        const double fx = w > 1 ? static_cast<double>(x) * (g - 1) / static_cast<double>(w - 1) : 0.0;
        const std::size_t iy = std::min<std::size_t>(static_cast<std::size_t>(fy), g - 2);
        const std::size_t ix = std::min<std::size_t>(static_cast<std::size_t>(fx), g - 2);
        const double ty = fy - static_cast<double>(iy), tx = fx - static_cast<double>(ix);
        const double a = coarse[iy * g + ix], b = coarse[iy * g + ix + 1];
        const double c = coarse[(iy + 1) * g + ix], d = coarse[(iy + 1) * g + ix + 1];
        L(0, 0, y, x) = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
      }
  }
  for (double v : L.storage())
    if (!(v > 0.0 && v < 1.0)) throw ValueError("make_lowlight: illumination " + std::to_string(v) + " outside (0, 1)");
  return L;
}

/// L * R.
template <typename T>
Tensor4<T> make_lowlight(const Tensor4<T>& R, const LowLightParams& p) {
  const Shape s = R.shape();
  const Tensor4<double> L = illumination(p, s.h, s.w);
  Tensor4<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.plane(); ++i)
        out.plane(n, c)[i] = static_cast<T>(L[i] * static_cast<double>(R.plane(n, c)[i]));
  return out;
}

// ---------------------------------------------------------------- clean images and datasets

/// Smooth background gradient with rectangles, disks and a sinusoidal
/// texture; values in [0, 1]. Shape (1, 3, h, w).
template <typename T>
Tensor4<T> procedural_image(std::size_t h, std::size_t w, Rng& rng) {
  Tensor4<T> img({1, 3, h, w});
  std::array<double, 3> c0, c1;
  for (auto& v : c0) v = rng.uniform(0.2, 0.8);
  for (auto& v : c1) v = rng.uniform(0.2, 0.8);
  const double ang = rng.uniform(0.0, 2 * std::numbers::pi);
  const double gx = std::cos(ang), gy = std::sin(ang);
  const double fx = rng.uniform(0.1, 0.6), fy = rng.uniform(0.1, 0.6), amp = rng.uniform(0.02, 0.12);
  const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
  std::vector<double> plane(3 * h * w);
  auto at = [&](std::size_t c, std::size_t y, std::size_t x) -> double& { return plane[(c * h + y) * w + x]; };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = ((static_cast<double>(x) / std::max<std::size_t>(w - 1, 1) - 0.5) * gx +
                        (static_cast<double>(y) / std::max<std::size_t>(h - 1, 1) - 0.5) * gy) + 0.5;
      const double tex = amp * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      for (std::size_t c = 0; c < 3; ++c) at(c, y, x) = c0[c] + (c1[c] - c0[c]) * u + tex;
    }
  const std::size_t shapes = 2 + rng.below(4);
  for (std::size_t k = 0; k < shapes; ++k) {
    std::array<double, 3> col;
    for (auto& v : col) v = rng.uniform(0.0, 1.0);
    const double cx = rng.uniform(0.0, static_cast<double>(w)), cy = rng.uniform(0.0, static_cast<double>(h));
    const double r = rng.uniform(0.1, 0.3) * static_cast<double>(std::min(h, w));
    const bool disk = rng.below(2) == 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const bool inside = disk ? dx * dx + dy * dy <= r * r : std::abs(dx) <= r && std::abs(dy) <= 0.7 * r;
        if (inside)
          for (std::size_t c = 0; c < 3; ++c) at(c, y, x) = col[c];
      }
  }
  for (std::size_t i = 0; i < plane.size(); ++i) img[i] = static_cast<T>(std::clamp(plane[i], 0.0, 1.0));
  return img;
}

template <typename T>
std::vector<Tensor4<T>> procedural_set(std::size_t count, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng root(seed);
  std::vector<Tensor4<T>> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng r = root.split(i);
    out.push_back(procedural_image<T>(h, w, r));
  }
  return out;
}

template <typename T>
struct Pair {
  Tensor4<T> degraded;
  Tensor4<T> clean;
  Scene scene = Scene::haze;
  /// key=value parameter record.
  std::string log;
};

template <typename T>
using Dataset = std::vector<Pair<T>>;

/// Degrades one image with parameters drawn from rng.
template <typename T>
Pair<T> degrade_random(const Tensor4<T>& clean, Scene scene, Rng& rng) {
  std::ostringstream log;
  log.precision(6);
  log << "scene=" << to_string(scene);
  Pair<T> p{Tensor4<T>(), clean, scene, {}};
  switch (scene) {
    case Scene::haze: {
      HazeParams h;
      const double A = rng.uniform(0.8, 1.0);
      h.airlight = {A, A, A};
      h.t_top = rng.uniform(0.25, 0.5);
      h.t_bottom = rng.uniform(0.75, 0.95);
      p.degraded = make_haze(clean, h);
      log << " A=" << A << " t_top=" << h.t_top << " t_bottom=" << h.t_bottom;
      break;
    }
    case Scene::rain: {
      RainParams r;
      r.count = static_cast<std::size_t>(std::lround(static_cast<double>(clean.h() * clean.w()) / 1024.0 * rng.uniform(8, 20)));
      r.angle = rng.uniform(0.0, 20.0);
      r.length = rng.uniform(6.0, 14.0);
      r.intensity = rng.uniform(0.4, 0.8);
      r.seed = rng.next();
      p.degraded = make_rain(clean, r).first;
      log << " count=" << r.count << " angle=" << r.angle << " length=" << r.length << " intensity=" << r.intensity
          << " seed=" << r.seed;
      break;
    }
    case Scene::lowlight: {
      LowLightParams l;
      l.kind = LowLightParams::Illumination::field;
      l.level_min = rng.uniform(0.1, 0.2);
      l.level_max = rng.uniform(0.3, 0.5);
      l.seed = rng.next();
      p.degraded = make_lowlight(clean, l);
      log << " L_min=" << l.level_min << " L_max=" << l.level_max << " seed=" << l.seed;
      break;
    }
    case Scene::mixed: throw ValueError("degrade_random: pick a concrete scene");
  }
  p.log = log.str();
  return p;
}

/// Deterministic paired set; "mixed" draws the scene uniformly per item.
template <typename T>
Dataset<T> gen_dataset(const std::vector<Tensor4<T>>& clean, Scene scene, std::uint64_t seed) {
  if (clean.empty()) throw ValueError("gen_dataset: no clean images");
  Rng root(seed);
  Dataset<T> out;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    Rng r = root.split(i);
    Scene s = scene;
    if (s == Scene::mixed) s = static_cast<Scene>(r.below(3));
    auto p = degrade_random(clean[i], s, r);
    p.log = "item=" + std::to_string(i) + " " + p.log;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace eranet
