#include <gtest/gtest.h>

#include "eranet/autograd.hpp"
#include "eranet/reparam.hpp"
#include "oracles.hpp"

using namespace eranet;

namespace {

KrmLayout layout(std::size_t C, EdgeOperator op = EdgeOperator::kirsch) { return {C, 2 * C, op, false}; }

ConvKernel<double> random_conv(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  auto c = make_conv<double>(out, in, k);
  c.weight = oracle::random(c.weight.shape(), rng);
  c.bias = oracle::random(c.bias.shape(), rng);
  return c;
}

}  // namespace

TEST(KrmForward, ZeroWeightsGiveZero) {
  Rng rng(1);
  auto w = make_krm<double>(layout(3));
  auto y = krm_forward_training(oracle::random({1, 3, 5, 5}, rng), w);
  for (double v : y.storage()) EXPECT_EQ(v, 0.0);
}

TEST(KrmForward, NormalIdentityOnly) {
  Rng rng(2);
  auto w = make_krm<double>(layout(3));
  for (std::size_t c = 0; c < 3; ++c) w.normal.weight(c, c, 1, 1) = 1;
  auto x = oracle::random({2, 3, 4, 6}, rng);
  EXPECT_EQ(krm_forward_training(x, w), x);
}

TEST(KrmForward, EqualsSumOfIndependentBranches) {
  Rng rng(3);
  auto w = oracle::random_krm(layout(4), rng);
  auto x = oracle::random({1, 4, 8, 8}, rng);
  auto branches = oracle::krm_branches(x, w);
  EXPECT_EQ(branches.size(), 10u);
  EXPECT_LE(max_abs_diff(krm_forward_training(x, w), oracle::krm_sum(x, w)), 1e-12);
  EXPECT_THROW(krm_forward_training(oracle::random({1, 3, 8, 8}, rng), w), ShapeError);
}

TEST(FuseExpandSqueeze, IdentityExpand) {
  Rng rng(4);
  auto e = make_conv<double>(3, 3, 1);
  for (std::size_t c = 0; c < 3; ++c) e.weight(c, c, 0, 0) = 1;
  auto s = random_conv(3, 3, 3, rng);
  auto f = fuse_expand_squeeze(e, s);
  EXPECT_EQ(f.weight, s.weight);
  EXPECT_EQ(f.bias, s.bias);
}

TEST(FuseExpandSqueeze, ZeroSqueezeKeepsSqueezeBias) {
  Rng rng(5);
  auto e = random_conv(4, 2, 1, rng);
  auto s = random_conv(2, 4, 3, rng);
  s.weight.fill(0);
  auto f = fuse_expand_squeeze(e, s);
  for (double v : f.weight.storage()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(f.bias, s.bias);
}

TEST(FuseExpandSqueeze, MatchesSequentialForwardEverywhere) {
  Rng rng(6);
  auto e = random_conv(4, 2, 1, rng);
  auto s = random_conv(2, 4, 3, rng);
  auto x = oracle::random({2, 2, 7, 5}, rng);
  auto mid = oracle::pointwise(x, e.weight, e.bias.storage());
  auto seq = oracle::conv(mid, s.weight, s.bias.storage(), e.bias.storage());
  EXPECT_LE(max_abs_diff(seq, conv2d(x, fuse_expand_squeeze(e, s))), 1e-12);
}

TEST(FuseExpandSqueeze, BilinearInFactors) {
  Rng rng(7);
  auto e = random_conv(4, 2, 1, rng);
  auto s = random_conv(2, 4, 3, rng);
  e.bias.fill(0);
  s.bias.fill(0);
  auto base = fuse_expand_squeeze(e, s);
  auto e2 = e;
  for (auto& v : e2.weight.storage()) v *= 3;
  auto scaled = fuse_expand_squeeze(e2, s);
  for (std::size_t i = 0; i < base.weight.size(); ++i) EXPECT_NEAR(scaled.weight[i], 3 * base.weight[i], 1e-12);
}

TEST(FuseExpandSqueeze, Errors) {
  Rng rng(8);
  EXPECT_THROW(fuse_expand_squeeze(random_conv(4, 2, 3, rng), random_conv(2, 4, 3, rng)), ShapeError);
  EXPECT_THROW(fuse_expand_squeeze(random_conv(4, 2, 1, rng), random_conv(2, 3, 3, rng)), ShapeError);
}

TEST(FuseKirschBranch, ZeroScale) {
  Rng rng(9);
  auto pre = random_conv(3, 3, 1, rng);
  std::vector<double> scale(3, 0.0), bias{0.1, 0.2, 0.3};
  auto f = fuse_kirsch_branch<double>(pre, scale, bank_kernel(bank_tensor<double>(kirsch_bank()), 2), bias);
  for (double v : f.weight.storage()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(f.bias.storage(), bias);
}

TEST(FuseKirschBranch, IdentityPreIsBlockDiagonal) {
  auto pre = make_conv<double>(3, 3, 1);
  for (std::size_t c = 0; c < 3; ++c) pre.weight(c, c, 0, 0) = 1;
  std::vector<double> scale(3, 1.0), bias(3, 0.0);
  const auto bank = bank_tensor<double>(kirsch_bank());
  auto f = fuse_kirsch_branch<double>(pre, scale, bank_kernel(bank, 0), bias);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < 9; ++k)
        EXPECT_EQ(f.weight.plane(o, c)[k], o == c ? static_cast<double>(kirsch_bank().kernels[0][k]) : 0.0);
}

TEST(FuseKirschBranch, MatchesSequentialForwardEverywhere) {
  Rng rng(10);
  auto pre = random_conv(3, 3, 1, rng);
  auto scale = oracle::random({3, 1, 1, 1}, rng), bias = oracle::random({3, 1, 1, 1}, rng);
  const auto bank = bank_tensor<double>(kirsch_bank());
  for (std::size_t i = 0; i < 8; ++i) {
    auto x = oracle::random({1, 3, 6, 6}, rng);
    auto mid = oracle::pointwise(x, pre.weight, pre.bias.storage());
    Tensor4<double> k({3, 1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < 9; ++j) k[c * 9 + j] = scale[c] * bank[i * 9 + j];
    auto seq = oracle::depthwise(mid, k, bias.storage(), pre.bias.storage());
    auto f = fuse_kirsch_branch<double>(pre, scale.values(), bank_kernel(bank, i), bias.values());
    EXPECT_LE(max_abs_diff(seq, conv2d(x, f)), 1e-12);
  }
}

TEST(FuseKirschBranch, Errors) {
  Rng rng(11);
  std::vector<double> s3(3, 1.0), s2(2, 1.0);
  const auto k = bank_kernel(bank_tensor<double>(kirsch_bank()), 0);
  EXPECT_THROW(fuse_kirsch_branch<double>(random_conv(3, 3, 3, rng), s3, k, s3), ShapeError);
  EXPECT_THROW(fuse_kirsch_branch<double>(random_conv(3, 3, 1, rng), s2, k, s3), ShapeError);
}

TEST(FuseKrm, ZeroAndNormalOnly) {
  auto w = make_krm<double>(layout(2));
  auto f = fuse_krm(w);
  for (double v : f.kernel.weight.storage()) EXPECT_EQ(v, 0.0);
  for (double v : f.kernel.bias.storage()) EXPECT_EQ(v, 0.0);

  Rng rng(12);
  w.normal = random_conv(2, 2, 3, rng);
  f = fuse_krm(w);
  EXPECT_EQ(f.kernel.weight, w.normal.weight);
  EXPECT_EQ(f.kernel.bias, w.normal.bias);
}

TEST(FuseKrm, CompositeEquivalenceIncludingBorders) {
  Rng rng(13);
  auto w = oracle::random_krm(layout(4), rng);
  auto x = oracle::random({2, 4, 16, 16}, rng);
  auto f = fuse_krm(w);
  EXPECT_LE(max_abs_diff(krm_forward_training(x, w), krm_forward_fused(x, f)), 1e-10);
}

TEST(FuseKrm, EquivalenceAcrossWidthsAndOperators) {
  Rng rng(14);
  for (std::size_t C : {1, 2, 4, 8}) {
    for (auto op : {EdgeOperator::kirsch, EdgeOperator::sobel, EdgeOperator::roberts, EdgeOperator::laplacian,
                    EdgeOperator::prewitt, EdgeOperator::none}) {
      auto w = oracle::random_krm(layout(C, op), rng);
      auto x = oracle::random({1, C, 9, 7}, rng);
      EXPECT_LE(max_abs_diff(krm_forward_training(x, w), krm_forward_fused(x, fuse_krm(w))), 1e-10)
          << "C=" << C << " op=" << to_string(op);
    }
  }
}

TEST(FuseKrm, SinglePrecision) {
  Rng rng(15);
  auto wd = oracle::random_krm(layout(8), rng);
  KrmWeights<float> w = make_krm<float>(layout(8));
  auto cast = [](const Tensor4<double>& t) { return t.cast<float>(); };
  w.normal.weight = cast(wd.normal.weight);
  w.normal.bias = cast(wd.normal.bias);
  w.expand.weight = cast(wd.expand.weight);
  w.expand.bias = cast(wd.expand.bias);
  w.squeeze.weight = cast(wd.squeeze.weight);
  w.squeeze.bias = cast(wd.squeeze.bias);
  for (std::size_t i = 0; i < 8; ++i) {
    w.branches[i].pre.weight = cast(wd.branches[i].pre.weight);
    w.branches[i].pre.bias = cast(wd.branches[i].pre.bias);
    w.branches[i].scale = cast(wd.branches[i].scale);
    w.branches[i].bias = cast(wd.branches[i].bias);
  }
  auto x = random_uniform<float>({1, 8, 12, 12}, rng, 0, 1);
  auto a = krm_forward_training(x, w), b = krm_forward_fused(x, fuse_krm(w));
  float scale = 1;
  for (float v : a.storage()) scale = std::max(scale, std::abs(v));
  EXPECT_LE(max_abs_diff(a, b) / scale, 1e-4f);
}

TEST(KrmCounts, ClosedForms) {
  EXPECT_EQ(fused_param_count(32), 9248u);
  const std::size_t training = 9248 + (32 * 64 + 64) + (64 * 32 * 9 + 32) + 8 * (32 * 32 + 32) + 8 * (32 + 32);
  EXPECT_EQ(krm_param_count(layout(32)), training);
  EXPECT_EQ(training, 38784u);
  for (std::size_t C = 1; C <= 64; ++C) EXPECT_LT(fused_param_count(C), krm_param_count(layout(C)));
  EXPECT_EQ(krm_param_count({32, 64, EdgeOperator::kirsch, true}), 9248u);
  EXPECT_LT(fused_macs_per_pixel(32), krm_macs_per_pixel(layout(32)));
}

TEST(KrmGradients, EveryLeafReceivesGradient) {
  Rng rng(16);
  auto w = oracle::random_krm(layout(2), rng);
  Tape<double> tape;
  Taped<double> e(tape);
  KrmParams<Var> v;
  v.layout = w.layout;
  auto bind = [&](const Tensor4<double>& t) { return tape.leaf(t, true); };
  v.normal = {bind(w.normal.weight), bind(w.normal.bias)};
  v.expand = {bind(w.expand.weight), bind(w.expand.bias)};
  v.squeeze = {bind(w.squeeze.weight), bind(w.squeeze.bias)};
  for (const auto& b : w.branches) v.branches.push_back({{bind(b.pre.weight), bind(b.pre.bias)}, bind(b.scale), bind(b.bias)});
  v.kernels = tape.constant(w.kernels);
  auto x = tape.constant(oracle::random({1, 2, 6, 6}, rng));
  auto y = krm_forward(e, x, v);
  auto probe = tape.constant(oracle::random({1, 2, 6, 6}, rng));
  tape.backward(e.sum(e.mul(e.mul(y, y), probe)));
  auto nonzero = [&](Var p) {
    for (double g : tape.grad(p).storage())
      if (g != 0) return true;
    return false;
  };
  EXPECT_TRUE(nonzero(v.normal.weight));
  EXPECT_TRUE(nonzero(v.normal.bias));
  EXPECT_TRUE(nonzero(v.expand.weight));
  EXPECT_TRUE(nonzero(v.expand.bias));
  EXPECT_TRUE(nonzero(v.squeeze.weight));
  EXPECT_TRUE(nonzero(v.squeeze.bias));
  for (const auto& b : v.branches) {
    EXPECT_TRUE(nonzero(b.pre.weight));
    EXPECT_TRUE(nonzero(b.pre.bias));
    EXPECT_TRUE(nonzero(b.scale));
    EXPECT_TRUE(nonzero(b.bias));
  }
  EXPECT_FALSE(tape.requires_grad(v.kernels));
}
