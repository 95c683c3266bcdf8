#include <gtest/gtest.h>

#include <cmath>

#include "eranet/attention.hpp"
#include "oracles.hpp"

using namespace eranet;

namespace {

CamWeights<double> random_cam(std::size_t C, std::size_t r, Rng& rng) {
  auto w = make_cam<double>(C, r);
  w.reduce.weight = oracle::random(w.reduce.weight.shape(), rng);
  w.expand.weight = oracle::random(w.expand.weight.shape(), rng);
  return w;
}

SamWeights<double> random_sam(Rng& rng) {
  auto w = make_sam<double>();
  w.conv7.weight = oracle::random(w.conv7.weight.shape(), rng, -0.3, 0.3);
  w.conv7.bias = oracle::random(w.conv7.bias.shape(), rng);
  return w;
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST(ChannelAttention, ZeroWeightsGiveHalf) {
  Rng rng(1);
  auto m = channel_attention(oracle::random({2, 8, 5, 4}, rng), make_cam<double>(8, 4));
  EXPECT_EQ(m.shape(), (Shape{2, 8, 1, 1}));
  for (double v : m.storage()) EXPECT_EQ(v, 0.5);
}

TEST(ChannelAttention, ConstantPerChannelCollapsesPooling) {
  Rng rng(2);
  auto w = random_cam(4, 2, rng);
  Tensor4<double> x({1, 4, 3, 3});
  std::vector<double> v{0.2, -0.5, 0.9, 0.1};
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 9; ++i) x.plane(0, c)[i] = v[c];
  auto m = channel_attention(x, w);
  for (std::size_t c = 0; c < 4; ++c) {
    double out = 0;
    for (std::size_t j = 0; j < 2; ++j) {
      double h = 0;
      for (std::size_t k = 0; k < 4; ++k) h += w.reduce.weight(j, k, 0, 0) * v[k];
      out += w.expand.weight(c, j, 0, 0) * std::max(h, 0.0);
    }
    EXPECT_NEAR(m[c], sig(2 * out), 1e-15);
  }
}

TEST(ChannelAttention, MatchesDenseOracle) {
  Rng rng(3);
  for (auto act : {CamActivation::relu, CamActivation::identity}) {
    auto w = random_cam(32, 8, rng);
    auto x = oracle::random({3, 32, 6, 7}, rng);
    auto got = channel_attention(x, w, act);
    EXPECT_LE(max_abs_diff(got, oracle::cam(x, w.reduce.weight, w.expand.weight, act == CamActivation::relu)), 1e-12);
  }
}

TEST(ChannelAttention, SpatialPermutationInvariant) {
  Rng rng(4);
  auto w = random_cam(8, 4, rng);
  auto x = oracle::random({1, 8, 4, 5}, rng);
  std::vector<std::size_t> perm(20);
  for (std::size_t i = 0; i < 20; ++i) perm[i] = (i * 7 + 3) % 20;
  Tensor4<double> p(x.shape());
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t i = 0; i < 20; ++i) p.plane(0, c)[i] = x.plane(0, c)[perm[i]];
  EXPECT_LE(max_abs_diff(channel_attention(x, w), channel_attention(p, w)), 1e-15);
}

TEST(ChannelAttention, Errors) {
  EXPECT_THROW(make_cam<double>(32, 5), ShapeError);
  EXPECT_THROW(make_cam<double>(32, 0), ShapeError);
  Rng rng(5);
  EXPECT_THROW(channel_attention(oracle::random({1, 4, 3, 3}, rng), make_cam<double>(8, 2)), ShapeError);
}

TEST(SpatialAttention, ZeroWeightsGiveHalf) {
  Rng rng(6);
  auto m = spatial_attention(oracle::random({2, 5, 6, 9}, rng), make_sam<double>());
  EXPECT_EQ(m.shape(), (Shape{2, 1, 6, 9}));
  for (double v : m.storage()) EXPECT_EQ(v, 0.5);
}

TEST(SpatialAttention, SingleChannelDuplicatesInput) {
  Rng rng(7);
  auto w = random_sam(rng);
  auto x = oracle::random({1, 1, 8, 8}, rng);
  Tensor4<double> k({1, 1, 7, 7});
  for (std::size_t i = 0; i < 49; ++i) k[i] = w.conv7.weight[i] + w.conv7.weight[49 + i];
  auto want = oracle::conv(x, k, {w.conv7.bias[0]});
  for (auto& v : want.storage()) v = sig(v);
  EXPECT_LE(max_abs_diff(spatial_attention(x, w), want), 1e-12);
}

TEST(SpatialAttention, MatchesNestedLoopOracle) {
  Rng rng(8);
  auto w = random_sam(rng);
  auto x = oracle::random({2, 6, 9, 11}, rng);
  EXPECT_LE(max_abs_diff(spatial_attention(x, w), oracle::sam(x, w.conv7.weight, w.conv7.bias[0])), 1e-12);
}

TEST(SpatialAttention, ChannelOrderInvariant) {
  Rng rng(9);
  auto w = random_sam(rng);
  auto x = oracle::random({1, 4, 6, 6}, rng);
  Tensor4<double> p(x.shape());
  const std::size_t order[] = {2, 0, 3, 1};
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 36; ++i) p.plane(0, c)[i] = x.plane(0, order[c])[i];
  EXPECT_LE(max_abs_diff(spatial_attention(x, w), spatial_attention(p, w)), 1e-15);
}

TEST(Attention, OutputsStrictlyInsideUnitInterval) {
  Rng rng(10);
  auto cw = random_cam(8, 2, rng);
  auto sw = random_sam(rng);
  auto x = oracle::random({2, 8, 7, 7}, rng, -3, 3);
  for (double v : channel_attention(x, cw).storage()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  for (double v : spatial_attention(x, sw).storage()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Attention, BatchSplitCommutes) {
  Rng rng(11);
  auto cw = random_cam(4, 2, rng);
  auto sw = random_sam(rng);
  auto x = oracle::random({2, 4, 5, 5}, rng);
  auto apply = [&](const Tensor4<double>& t) {
    auto ca = channel_attention(t, cw);
    Tensor4<double> g(t.shape());
    const Shape s = t.shape();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t i = 0; i < 25; ++i) g.plane(n, c)[i] = t.plane(n, c)[i] * ca(n, c, 0, 0);
    auto sa = spatial_attention(g, sw);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t i = 0; i < 25; ++i) g.plane(n, c)[i] *= sa.plane(n, 0)[i];
    return g;
  };
  auto whole = apply(x);
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor4<double> one({1, 4, 5, 5});
    std::copy(x.plane(n, 0), x.plane(n, 0) + 100, one.data());
    auto part = apply(one);
    EXPECT_TRUE(std::equal(part.data(), part.data() + 100, whole.plane(n, 0)));
  }
}
