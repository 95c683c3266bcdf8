#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "eranet/ops.hpp"
#include "eranet/tensor.hpp"

namespace eranet {

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t tape = 0;
  std::uint32_t id = 0;
};

struct TapeError : Error {
  using Error::Error;
};

/// Ordered record of differentiable operations. Single writer: one training
/// step owns one tape.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor4<T>& gout)>;

  Tape() : uid_(next_uid()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor4<T> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr});
    return {uid_, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }
  Var constant(Tensor4<T> value) { return leaf(std::move(value), false); }

  /// Appends an op output. It requires grad iff any input does; the backward
  /// closure is dropped otherwise.
  Var record(Tensor4<T> value, std::initializer_list<Var> inputs, Backward back) {
    bool rg = false;
    for (Var v : inputs) rg = rg || node(v).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(back) : nullptr});
    return {uid_, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Tensor4<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool owns(Var v) const { return v.tape == uid_ && v.id < nodes_.size(); }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulated so far; zeros if nothing reached v.
  Tensor4<T> grad(Var v) const {
    const Node& nd = node(v);
    return nd.grad.empty() ? Tensor4<T>(nd.value.shape()) : nd.grad;
  }

  /// Mutable gradient buffer of v, allocated as zeros on first use.
  Tensor4<T>& grad_buffer(Var v) {
    Node& nd = node(v);
    if (nd.grad.empty() && !nd.value.empty()) nd.grad = Tensor4<T>(nd.value.shape());
    return nd.grad;
  }

  void accumulate(Var v, const Tensor4<T>& g) {
    if (!requires_grad(v)) return;
    Tensor4<T>& buf = grad_buffer(v);
    if (buf.shape() != g.shape()) throw TapeError("gradient shape mismatch at node " + std::to_string(v.id));
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  /// Reverse sweep from a scalar output; each node is visited once, newest first.
  void backward(Var out) {
    if (!owns(out)) throw TapeError("backward: output is not on this tape");
    if (value(out).shape() != Shape{1, 1, 1, 1}) throw TapeError("backward: output is not a scalar " + value(out).shape().str());
    if (!requires_grad(out)) return;
    grad_buffer(out)[0] += T(1);
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& nd = nodes_[i];
      if (!nd.back || nd.grad.empty()) continue;
      nd.back(*this, nd.grad);
    }
  }

  void zero_grad() {
    for (auto& nd : nodes_) nd.grad = Tensor4<T>();
  }

  /// Hash of every branch taken by non-smooth ops (activation signs, argmax
  /// picks, clamps). Equal signatures on two runs mean both lie in the same
  /// smooth piece of the recorded function. Disabled unless requested.
  void track_branches(bool on) { track_ = on; }
  bool tracking_branches() const { return track_; }
  void note_branch(std::uint64_t bits) {
    sig_ ^= bits + 0x9e3779b97f4a7c15ULL + (sig_ << 6) + (sig_ >> 2);
  }
  std::uint64_t branch_signature() const { return sig_; }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;
    bool requires_grad = false;
    Backward back;
  };

  static std::uint32_t next_uid() {
    static std::atomic<std::uint32_t> counter{1};
    return counter++;
  }

  Node& node(Var v) {
    if (!owns(v)) throw TapeError("variable does not belong to this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (!owns(v)) throw TapeError("variable does not belong to this tape");
    return nodes_[v.id];
  }

  std::uint32_t uid_;
  std::deque<Node> nodes_;
  bool track_ = false;
  std::uint64_t sig_ = 0;
};

/// Reverse-mode execution engine: every op records itself on the tape.
template <typename T>
class Taped {
 public:
  using Scalar = T;
  using Value = Var;
  static constexpr bool records = true;

  explicit Taped(Tape<T>& tape) : t_(tape) {}
  Tape<T>& tape() { return t_; }

  Shape shape(Var v) const { return t_.value(v).shape(); }
  const Tensor4<T>& value(Var v) const { return t_.value(v); }
  Var constant(Tensor4<T> v) { return t_.constant(std::move(v)); }

  Var pad(Var x, std::size_t margin, const Var* values) {
    std::span<const T> vals;
    if (values) vals = t_.value(*values).values();
    auto out = kernels::pad_constant(t_.value(x), margin, vals);
    const Var vv = values ? *values : x;
    const bool has_values = values != nullptr;
    return t_.record(std::move(out), {x, vv},
                     [x, vv, has_values, margin](Tape<T>& t, const Tensor4<T>& g) {
                       if (t.requires_grad(x)) t.accumulate(x, kernels::crop(g, margin));
                       if (has_values && t.requires_grad(vv))
                         kernels::pad_constant_values_grad(g, margin, t.grad_buffer(vv).values());
                     });
  }

  Var crop(Var x, std::size_t margin) {
    const Shape in = shape(x);
    return t_.record(kernels::crop(t_.value(x), margin), {x}, [x, margin, in](Tape<T>& t, const Tensor4<T>& g) {
      auto gx = kernels::pad_constant<T>(g, margin, {});
      t.accumulate(x, gx.reshaped(in));
    });
  }

  Var conv(Var x, Var w, const Var* b) {
    std::span<const T> bias;
    if (b) bias = t_.value(*b).values();
    auto out = kernels::conv_valid(t_.value(x), t_.value(w), bias);
    const Var bb = b ? *b : w;
    const bool has_b = b != nullptr;
    return t_.record(std::move(out), {x, w, bb}, [x, w, bb, has_b](Tape<T>& t, const Tensor4<T>& g) {
      if (t.requires_grad(x)) t.accumulate(x, kernels::conv_valid_input_grad(g, t.value(w), t.value(x).shape()));
      if (t.requires_grad(w)) kernels::conv_valid_weight_grad(g, t.value(x), t.grad_buffer(w));
      if (has_b && t.requires_grad(bb)) kernels::channel_sum_grad(g, t.grad_buffer(bb).values());
    });
  }

  Var depthwise(Var x, Var w, const Var* b) {
    std::span<const T> bias;
    if (b) bias = t_.value(*b).values();
    auto out = kernels::depthwise_valid(t_.value(x), t_.value(w), bias);
    const Var bb = b ? *b : w;
    const bool has_b = b != nullptr;
    return t_.record(std::move(out), {x, w, bb}, [x, w, bb, has_b](Tape<T>& t, const Tensor4<T>& g) {
      if (t.requires_grad(x)) t.accumulate(x, kernels::depthwise_valid_input_grad(g, t.value(w), t.value(x).shape()));
      if (t.requires_grad(w)) kernels::depthwise_valid_weight_grad(g, t.value(x), t.grad_buffer(w));
      if (has_b && t.requires_grad(bb)) kernels::channel_sum_grad(g, t.grad_buffer(bb).values());
    });
  }

  Var global_pool(Var x, PoolMode mode) {
    auto out = kernels::global_pool(t_.value(x), mode);
    if (t_.tracking_branches() && mode == PoolMode::max) note_argmax_spatial(t_.value(x));
    return t_.record(std::move(out), {x}, [x, mode](Tape<T>& t, const Tensor4<T>& g) {
      t.accumulate(x, kernels::global_pool_grad(g, t.value(x), mode));
    });
  }

  Var channel_pool(Var x, PoolMode mode) {
    auto out = kernels::channel_pool(t_.value(x), mode);
    if (t_.tracking_branches() && mode == PoolMode::max) note_argmax_channel(t_.value(x));
    return t_.record(std::move(out), {x}, [x, mode](Tape<T>& t, const Tensor4<T>& g) {
      t.accumulate(x, kernels::channel_pool_grad(g, t.value(x), mode));
    });
  }

  Var concat(Var a, Var b) {
    const std::size_t ca = shape(a).c, cb = shape(b).c;
    return t_.record(kernels::concat_channels(t_.value(a), t_.value(b)), {a, b},
                     [a, b, ca, cb](Tape<T>& t, const Tensor4<T>& g) {
                       if (t.requires_grad(a)) t.accumulate(a, kernels::slice_channels(g, 0, ca));
                       if (t.requires_grad(b)) t.accumulate(b, kernels::slice_channels(g, ca, cb));
                     });
  }

  Var prelu(Var x, Var slopes) {
    const auto& xv = t_.value(x);
    if (t_.tracking_branches()) note_signs(xv, T(0));
    return t_.record(kernels::prelu(xv, t_.value(slopes).values()), {x, slopes},
                     [x, slopes](Tape<T>& t, const Tensor4<T>& g) {
                       std::span<T> gs;
                       if (t.requires_grad(slopes)) gs = t.grad_buffer(slopes).values();
                       auto gx = kernels::prelu_grad(g, t.value(x), t.value(slopes).values(), gs);
                       t.accumulate(x, gx);
                     });
  }

  Var relu(Var x) {
    const auto& xv = t_.value(x);
    if (t_.tracking_branches()) note_signs(xv, T(0));
    return t_.record(kernels::map(xv, [](T v) { return v > 0 ? v : T(0); }), {x}, [x](Tape<T>& t, const Tensor4<T>& g) {
      const auto& xv = t.value(x);
      t.accumulate(x, kernels::zip(g, xv, [](T gi, T v) { return v > 0 ? gi : T(0); }, "relu"));
    });
  }

  Var sigmoid(Var x) {
    auto y = kernels::sigmoid(t_.value(x));
    Tensor4<T> yc = y;
    return t_.record(std::move(y), {x}, [x, yc = std::move(yc)](Tape<T>& t, const Tensor4<T>& g) {
      t.accumulate(x, kernels::zip(g, yc, [](T gi, T s) { return gi * s * (T(1) - s); }, "sigmoid"));
    });
  }

  Var layer_norm(Var x, Var gain, Var shift, T eps, NormMode mode) {
    Tensor4<T> xhat;
    std::vector<T> inv_std;
    auto y = kernels::layer_norm(t_.value(x), t_.value(gain).values(), t_.value(shift).values(), eps, mode, &xhat, &inv_std);
    return t_.record(std::move(y), {x, gain, shift},
                     [x, gain, shift, mode, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, const Tensor4<T>& g) {
                       std::span<T> gg, gs;
                       if (t.requires_grad(gain)) gg = t.grad_buffer(gain).values();
                       if (t.requires_grad(shift)) gs = t.grad_buffer(shift).values();
                       auto gx = kernels::layer_norm_grad(g, xhat, inv_std, t.value(gain).values(), mode, gg, gs);
                       t.accumulate(x, gx);
                     });
  }

  Var clamp(Var x, T lo, T hi) {
    const auto& xv = t_.value(x);
    if (t_.tracking_branches()) {
      note_signs(xv, lo);
      note_signs(xv, hi);
    }
    return t_.record(kernels::map(xv, [lo, hi](T v) { return std::clamp(v, lo, hi); }), {x},
                     [x, lo, hi](Tape<T>& t, const Tensor4<T>& g) {
                       t.accumulate(x, kernels::zip(g, t.value(x), [lo, hi](T gi, T v) { return v > lo && v < hi ? gi : T(0); }, "clamp"));
                     });
  }

  Var add(Var a, Var b) {
    return t_.record(kernels::zip(t_.value(a), t_.value(b), std::plus<T>{}, "add"), {a, b},
                     [a, b](Tape<T>& t, const Tensor4<T>& g) {
                       t.accumulate(a, g);
                       t.accumulate(b, g);
                     });
  }

  Var sub(Var a, Var b) {
    return t_.record(kernels::zip(t_.value(a), t_.value(b), std::minus<T>{}, "sub"), {a, b},
                     [a, b](Tape<T>& t, const Tensor4<T>& g) {
                       t.accumulate(a, g);
                       if (t.requires_grad(b)) t.accumulate(b, kernels::map(g, [](T v) { return -v; }));
                     });
  }

  /// Broadcasting elementwise product.
  Var mul(Var a, Var b) {
    return t_.record(kernels::mul(t_.value(a), t_.value(b)), {a, b}, [a, b](Tape<T>& t, const Tensor4<T>& g) {
      Tensor4<T>* ga = t.requires_grad(a) ? &t.grad_buffer(a) : nullptr;
      Tensor4<T>* gb = t.requires_grad(b) ? &t.grad_buffer(b) : nullptr;
      kernels::mul_grad(g, t.value(a), t.value(b), ga, gb);
    });
  }

  Var div(Var a, Var b) {
    return t_.record(kernels::zip(t_.value(a), t_.value(b), std::divides<T>{}, "div"), {a, b},
                     [a, b](Tape<T>& t, const Tensor4<T>& g) {
                       const auto& av = t.value(a);
                       const auto& bv = t.value(b);
                       if (t.requires_grad(a)) t.accumulate(a, kernels::zip(g, bv, std::divides<T>{}, "div"));
                       if (t.requires_grad(b)) {
                         Tensor4<T> gb(bv.shape());
                         for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -g[i] * av[i] / (bv[i] * bv[i]);
                         t.accumulate(b, gb);
                       }
                     });
  }

  Var scale(Var x, T alpha) {
    return t_.record(kernels::map(t_.value(x), [alpha](T v) { return alpha * v; }), {x},
                     [x, alpha](Tape<T>& t, const Tensor4<T>& g) {
                       t.accumulate(x, kernels::map(g, [alpha](T v) { return alpha * v; }));
                     });
  }

  Var add_scalar(Var x, T alpha) {
    return t_.record(kernels::map(t_.value(x), [alpha](T v) { return v + alpha; }), {x},
                     [x](Tape<T>& t, const Tensor4<T>& g) { t.accumulate(x, g); });
  }

  Var separable(Var x, const std::vector<T>& wy, const std::vector<T>& wx) {
    const Shape in = shape(x);
    return t_.record(kernels::separable_valid<T>(t_.value(x), wy, wx), {x}, [x, wy, wx, in](Tape<T>& t, const Tensor4<T>& g) {
      t.accumulate(x, kernels::separable_valid_grad<T>(g, wy, wx, in));
    });
  }

  Var avg_pool2(Var x) {
    const Shape in = shape(x);
    return t_.record(kernels::avg_pool2(t_.value(x)), {x},
                     [x, in](Tape<T>& t, const Tensor4<T>& g) { t.accumulate(x, kernels::avg_pool2_grad(g, in)); });
  }

  Var mean_per_sample(Var x) {
    const Shape in = shape(x);
    return t_.record(kernels::mean_per_sample(t_.value(x)), {x}, [x, in](Tape<T>& t, const Tensor4<T>& g) {
      const std::size_t per = in.c * in.plane();
      Tensor4<T> gx(in);
      for (std::size_t n = 0; n < in.n; ++n)
        std::fill(gx.data() + n * per, gx.data() + (n + 1) * per, g[n] / static_cast<T>(per));
      t.accumulate(x, gx);
    });
  }

  Var sum(Var x) {
    const Shape in = shape(x);
    return t_.record(Tensor4<T>({1, 1, 1, 1}, kernels::sum(t_.value(x))), {x},
                     [x, in](Tape<T>& t, const Tensor4<T>& g) { t.accumulate(x, Tensor4<T>(in, g[0])); });
  }

  Var mean(Var x) {
    const Shape in = shape(x);
    const T n = static_cast<T>(in.numel());
    require(in.numel() > 0, "mean of empty tensor");
    return t_.record(Tensor4<T>({1, 1, 1, 1}, kernels::sum(t_.value(x)) / n), {x},
                     [x, in, n](Tape<T>& t, const Tensor4<T>& g) { t.accumulate(x, Tensor4<T>(in, g[0] / n)); });
  }

  /// max(x, floor)^beta; gradient is zero where the floor is active.
  Var pow_floor(Var x, T beta, T floor) {
    const auto& xv = t_.value(x);
    if (t_.tracking_branches()) note_signs(xv, floor);
    return t_.record(kernels::map(xv, [beta, floor](T v) { return std::pow(std::max(v, floor), beta); }), {x},
                     [x, beta, floor](Tape<T>& t, const Tensor4<T>& g) {
                       t.accumulate(x, kernels::zip(g, t.value(x), [beta, floor](T gi, T v) {
                                      return v > floor ? gi * beta * std::pow(v, beta - T(1)) : T(0);
                                    }, "pow"));
                     });
  }

  Var abs(Var x) {
    const auto& xv = t_.value(x);
    if (t_.tracking_branches()) note_signs(xv, T(0));
    return t_.record(kernels::map(xv, [](T v) { return std::abs(v); }), {x}, [x](Tape<T>& t, const Tensor4<T>& g) {
      t.accumulate(x, kernels::zip(g, t.value(x), [](T gi, T v) { return v > 0 ? gi : (v < 0 ? -gi : T(0)); }, "abs"));
    });
  }

  /// sqrt(mean(x^2)) as a (1,1,1,1) scalar; gradient taken as zero at the origin.
  Var rms(Var x) {
    const auto& xv = t_.value(x);
    const T n = static_cast<T>(xv.size());
    require(xv.size() > 0, "rms of empty tensor");
    T ss = 0;
    for (T v : xv.storage()) ss += v * v;
    const T r = std::sqrt(ss / n);
    if (t_.tracking_branches()) t_.note_branch(r > 0 ? 1 : 0);
    return t_.record(Tensor4<T>({1, 1, 1, 1}, r), {x}, [x, r, n](Tape<T>& t, const Tensor4<T>& g) {
      if (r <= 0) return;
      const T k = g[0] / (n * r);
      t.accumulate(x, kernels::map(t.value(x), [k](T v) { return k * v; }));
    });
  }

  Var diff(Var x, bool along_h) {
    const Shape in = shape(x);
    return t_.record(kernels::diff(t_.value(x), along_h), {x}, [x, along_h, in](Tape<T>& t, const Tensor4<T>& g) {
      t.accumulate(x, kernels::diff_grad(g, along_h, in));
    });
  }

 private:
  void note_signs(const Tensor4<T>& v, T threshold) {
    // Base-3 digits (below / above / exactly at the threshold), 40 per word.
    std::uint64_t word = 0;
    std::size_t digits = 0;
    for (T e : v.storage()) {
      word = word * 3 + (e > threshold ? 1u : (e == threshold ? 2u : 0u));
      if (++digits == 40) {
        t_.note_branch(word);
        word = 0;
        digits = 0;
      }
    }
    t_.note_branch(word);
  }
  void note_argmax_spatial(const Tensor4<T>& v) {
    const Shape s = v.shape();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* p = v.plane(n, c);
        t_.note_branch(static_cast<std::uint64_t>(std::max_element(p, p + s.plane()) - p));
      }
  }
  void note_argmax_channel(const Tensor4<T>& v) {
    const Shape s = v.shape();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < s.c; ++c)
          if (v.plane(n, c)[i] > v.plane(n, best)[i]) best = c;
        t_.note_branch(best);
      }
  }

  Tape<T>& t_;
};

}  // namespace eranet
