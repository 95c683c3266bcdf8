#include <gtest/gtest.h>

#include <functional>

#include "eranet/autograd.hpp"
#include "eranet/eager.hpp"
#include "oracles.hpp"

using namespace eranet;

TEST(Backward, SumGivesOnes) {
  Tape<double> t;
  Taped<double> e(t);
  Rng rng(1);
  auto x = t.leaf(oracle::random({2, 3, 4, 5}, rng), true);
  t.backward(e.sum(x));
  for (double g : t.grad(x).storage()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, Quadratic) {
  Tape<double> t;
  Taped<double> e(t);
  auto x = t.leaf(Tensor4<double>({1, 1, 1, 1}, 3.0), true);
  t.backward(e.sum(e.mul(x, x)));
  EXPECT_EQ(t.grad(x)[0], 6.0);
}

TEST(Backward, Errors) {
  Tape<double> t, other;
  Taped<double> e(t);
  auto x = t.leaf(Tensor4<double>({1, 1, 2, 2}, 1.0), true);
  EXPECT_THROW(t.backward(x), TapeError);
  auto y = other.leaf(Tensor4<double>({1, 1, 1, 1}, 1.0), true);
  EXPECT_THROW(t.backward(y), TapeError);
}

TEST(Backward, SharedInputAccumulates) {
  Tape<double> t;
  Taped<double> e(t);
  auto x = t.leaf(Tensor4<double>({1, 1, 1, 2}, std::vector<double>{2, -1}), true);
  auto y = e.add(e.scale(x, 3), e.mul(x, x));
  t.backward(e.sum(y));
  EXPECT_EQ(t.grad(x)[0], 3 + 4);
  EXPECT_EQ(t.grad(x)[1], 3 - 2);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tape<double> t;
  Taped<double> e(t);
  auto x = t.leaf(Tensor4<double>({1, 1, 1, 1}, 2.0), true);
  auto c = t.constant(Tensor4<double>({1, 1, 1, 1}, 5.0));
  t.backward(e.sum(e.mul(x, c)));
  EXPECT_EQ(t.grad(x)[0], 5.0);
  EXPECT_FALSE(t.requires_grad(c));
  EXPECT_EQ(t.grad(c)[0], 0.0);
}

namespace {

template <typename T>
using OpFn = std::function<Var(Taped<T>&, const std::vector<Var>&)>;

struct OpCase {
  std::string name;
  std::vector<Shape> inputs;
  double lo = -1, hi = 1;
  /// Input values closer than 0.02 to any of these are resampled.
  std::vector<double> kinks{};
};

template <typename T>
std::vector<Tensor4<T>> make_inputs(const OpCase& c, Rng& rng) {
  std::vector<Tensor4<T>> out;
  for (Shape s : c.inputs) {
    Tensor4<T> t(s);
    for (auto& v : t.storage()) {
      double d;
      do {
        d = rng.uniform(c.lo, c.hi);
      } while (std::any_of(c.kinks.begin(), c.kinks.end(), [&](double k) { return std::abs(d - k) < 0.02; }));
      v = static_cast<T>(d);
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Projected scalar sum(out * probe), evaluated with or without gradients.
template <typename T>
T evaluate(const OpFn<T>& fn, const std::vector<Tensor4<T>>& in, Tensor4<T>* probe, std::vector<Tensor4<T>>* grads) {
  Tape<T> tape;
  Taped<T> e(tape);
  std::vector<Var> vars;
  for (const auto& t : in) vars.push_back(tape.leaf(t, grads != nullptr));
  Var out = fn(e, vars);
  if (probe->empty()) {
    Rng r(99);
    *probe = random_uniform<T>(tape.value(out).shape(), r, 0.5, 1.5);
  }
  Var loss = e.sum(e.mul(out, tape.constant(*probe)));
  if (grads) {
    tape.backward(loss);
    for (Var v : vars) grads->push_back(tape.grad(v));
  }
  return tape.value(loss)[0];
}

template <typename T>
double worst_relative_error(const OpCase& c, const OpFn<T>& fn, double h) {
  Rng rng(1234);
  auto in = make_inputs<T>(c, rng);
  Tensor4<T> probe;
  std::vector<Tensor4<T>> grads;
  evaluate(fn, in, &probe, &grads);
  double worst = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    double scale = 1e-3;
    std::vector<double> fd(in[i].size());
    for (std::size_t k = 0; k < in[i].size(); ++k) {
      const T keep = in[i][k];
      in[i][k] = keep + static_cast<T>(h);
      const double fp = evaluate<T>(fn, in, &probe, nullptr);
      in[i][k] = keep - static_cast<T>(h);
      const double fm = evaluate<T>(fn, in, &probe, nullptr);
      in[i][k] = keep;
      fd[k] = (fp - fm) / (2 * h);
      scale = std::max(scale, std::abs(fd[k]));
    }
    for (std::size_t k = 0; k < fd.size(); ++k)
      worst = std::max(worst, std::abs(static_cast<double>(grads[i][k]) - fd[k]) / scale);
  }
  return worst;
}

template <typename T>
std::vector<std::pair<OpCase, OpFn<T>>> op_cases() {
  using E = Taped<T>;
  using V = std::vector<Var>;
  std::vector<std::pair<OpCase, OpFn<T>>> c;
  const Shape x{2, 3, 5, 4};
  c.push_back({{"pad_values", {x, {3, 1, 1, 1}}}, [](E& e, const V& v) { return e.pad(v[0], 2, &v[1]); }});
  c.push_back({{"pad_zero", {x}}, [](E& e, const V& v) { return e.pad(v[0], 1, nullptr); }});
  c.push_back({{"crop", {x}}, [](E& e, const V& v) { return e.crop(v[0], 1); }});
  c.push_back({{"conv", {x, {2, 3, 3, 3}, {2, 1, 1, 1}}}, [](E& e, const V& v) { return e.conv(v[0], v[1], &v[2]); }});
  c.push_back({{"conv_same_pad", {x, {2, 3, 3, 3}, {2, 1, 1, 1}, {3, 1, 1, 1}}},
               [](E& e, const V& v) { return conv_same(e, v[0], v[1], &v[2], &v[3]); }});
  c.push_back({{"depthwise", {x, {3, 1, 3, 3}, {3, 1, 1, 1}}},
               [](E& e, const V& v) { return e.depthwise(v[0], v[1], &v[2]); }});
  c.push_back({{"global_avg", {x}}, [](E& e, const V& v) { return e.global_pool(v[0], PoolMode::avg); }});
  c.push_back({{"global_max", {x}}, [](E& e, const V& v) { return e.global_pool(v[0], PoolMode::max); }});
  c.push_back({{"channel_avg", {x}}, [](E& e, const V& v) { return e.channel_pool(v[0], PoolMode::avg); }});
  c.push_back({{"channel_max", {x}}, [](E& e, const V& v) { return e.channel_pool(v[0], PoolMode::max); }});
  c.push_back({{"concat", {x, {2, 1, 5, 4}}}, [](E& e, const V& v) { return e.concat(v[0], v[1]); }});
  c.push_back({{"prelu", {x, {3, 1, 1, 1}}, -1, 1, {0.0}}, [](E& e, const V& v) { return e.prelu(v[0], v[1]); }});
  c.push_back({{"relu", {x}, -1, 1, {0.0}}, [](E& e, const V& v) { return e.relu(v[0]); }});
  c.push_back({{"sigmoid", {x}, -4, 4}, [](E& e, const V& v) { return e.sigmoid(v[0]); }});
  c.push_back({{"layer_norm_channel", {x, {3, 1, 1, 1}, {3, 1, 1, 1}}},
               [](E& e, const V& v) { return e.layer_norm(v[0], v[1], v[2], T(1e-5), NormMode::per_channel); }});
  c.push_back({{"layer_norm_sample", {x, {3, 1, 1, 1}, {3, 1, 1, 1}}},
               [](E& e, const V& v) { return e.layer_norm(v[0], v[1], v[2], T(1e-5), NormMode::per_sample); }});
  c.push_back({{"clamp", {x}, -1, 1, {-0.5, 0.5}}, [](E& e, const V& v) { return e.clamp(v[0], T(-0.5), T(0.5)); }});
  c.push_back({{"add", {x, x}}, [](E& e, const V& v) { return e.add(v[0], v[1]); }});
  c.push_back({{"sub", {x, x}}, [](E& e, const V& v) { return e.sub(v[0], v[1]); }});
  c.push_back({{"mul_broadcast_channel", {x, {2, 3, 1, 1}}}, [](E& e, const V& v) { return e.mul(v[0], v[1]); }});
  c.push_back({{"mul_broadcast_spatial", {{2, 1, 5, 4}, x}}, [](E& e, const V& v) { return e.mul(v[0], v[1]); }});
  c.push_back({{"div", {x, x}, 0.5, 1.5}, [](E& e, const V& v) { return e.div(v[0], v[1]); }});
  c.push_back({{"scale", {x}}, [](E& e, const V& v) { return e.scale(v[0], T(-2.5)); }});
  c.push_back({{"add_scalar", {x}}, [](E& e, const V& v) { return e.add_scalar(v[0], T(0.7)); }});
  c.push_back({{"separable", {{2, 2, 7, 6}}}, [](E& e, const V& v) {
                 return e.separable(v[0], std::vector<T>{T(0.2), T(0.5), T(0.3)}, std::vector<T>{T(0.6), T(0.4)});
               }});
  c.push_back({{"avg_pool2", {{2, 2, 5, 6}}}, [](E& e, const V& v) { return e.avg_pool2(v[0]); }});
  c.push_back({{"mean_per_sample", {x}}, [](E& e, const V& v) { return e.mean_per_sample(v[0]); }});
  c.push_back({{"sum", {x}}, [](E& e, const V& v) { return e.sum(v[0]); }});
  c.push_back({{"mean", {x}}, [](E& e, const V& v) { return e.mean(v[0]); }});
  c.push_back({{"pow_floor", {x}, 0.1, 1.0, {0.2}}, [](E& e, const V& v) { return e.pow_floor(v[0], T(0.7), T(0.2)); }});
  c.push_back({{"abs", {x}, -1, 1, {0.0}}, [](E& e, const V& v) { return e.abs(v[0]); }});
  c.push_back({{"rms", {x}}, [](E& e, const V& v) { return e.rms(v[0]); }});
  c.push_back({{"diff_h", {x}}, [](E& e, const V& v) { return e.diff(v[0], true); }});
  c.push_back({{"diff_w", {x}}, [](E& e, const V& v) { return e.diff(v[0], false); }});
  return c;
}

}  // namespace

TEST(FiniteDifference, EveryOpDouble) {
  for (const auto& [c, fn] : op_cases<double>()) {
    SCOPED_TRACE(c.name);
    EXPECT_LE(worst_relative_error<double>(c, fn, 1e-4), 1e-6) << c.name;
  }
}

// Single-precision gradients checked against the double tape on the same
// float-representable inputs; central differences in float are too coarse.
TEST(Gradients, SingleMatchesDouble) {
  const auto dcases = op_cases<double>();
  const auto fcases = op_cases<float>();
  for (std::size_t i = 0; i < dcases.size(); ++i) {
    const OpCase& c = dcases[i].first;
    SCOPED_TRACE(c.name);
    Rng rng(1234);
    std::vector<Tensor4<double>> din;
    std::vector<Tensor4<float>> fin;
    for (auto& t : make_inputs<float>(c, rng)) {
      din.push_back(t.cast<double>());
      fin.push_back(std::move(t));
    }
    Tensor4<double> dprobe;
    std::vector<Tensor4<double>> dg;
    evaluate(dcases[i].second, din, &dprobe, &dg);
    Tensor4<float> fprobe = dprobe.cast<float>();
    dprobe = fprobe.cast<double>();
    dg.clear();
    evaluate(dcases[i].second, din, &dprobe, &dg);
    std::vector<Tensor4<float>> fg;
    evaluate(fcases[i].second, fin, &fprobe, &fg);
    for (std::size_t k = 0; k < dg.size(); ++k) {
      double scale = 1e-3;
      for (double v : dg[k].storage()) scale = std::max(scale, std::abs(v));
      for (std::size_t j = 0; j < dg[k].size(); ++j)
        EXPECT_LE(std::abs(static_cast<double>(fg[k][j]) - dg[k][j]) / scale, 1e-4) << "input " << k << " elem " << j;
    }
  }
}

TEST(Engines, EagerAndTapedAgree) {
  Rng rng(5);
  auto x = oracle::random({1, 2, 6, 6}, rng), w = oracle::random({3, 2, 3, 3}, rng);
  Eager<double> eager;
  Tape<double> t;
  Taped<double> taped(t);
  auto a = conv_same(eager, eager.sigmoid(x), w, nullptr);
  auto b = conv_same(taped, taped.sigmoid(t.constant(x)), t.constant(w), nullptr);
  EXPECT_EQ(a, t.value(b));
}

TEST(BranchSignature, ChangesWhenAKinkIsCrossed) {
  auto sig = [](double v) {
    Tape<double> t;
    t.track_branches(true);
    Taped<double> e(t);
    auto x = t.leaf(Tensor4<double>({1, 1, 1, 2}, std::vector<double>{v, 0.5}), true);
    e.sum(e.relu(x));
    return t.branch_signature();
  };
  EXPECT_EQ(sig(0.3), sig(0.4));
  EXPECT_NE(sig(0.3), sig(-0.3));
}
