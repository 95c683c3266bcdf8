#include <gtest/gtest.h>

#include <cmath>

#include "eranet/log.hpp"
#include "eranet/trainer.hpp"
#include "oracles.hpp"

using namespace eranet;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.channels = 4;
  c.blocks = 1;
  c.cam_reduction = 2;
  return c;
}

Dataset<double> toy_data(std::size_t n, std::size_t size, std::uint64_t seed) {
  return gen_dataset(procedural_set<double>(n, size, size, seed), Scene::mixed, seed + 1);
}

std::vector<Tensor4<double>> save_params(EraNet<double>& m) {
  std::vector<Tensor4<double>> out;
  visit_params(m.config(), m.mode(), [&](const ParamInfo&, Tensor4<double>& t) { out.push_back(t); }, m.params());
  return out;
}

struct QuietWarnings {
  std::function<void(const std::string&)> prev = set_warning_sink([](const std::string&) {});
  ~QuietWarnings() { set_warning_sink(prev); }
};

}  // namespace

TEST(Schedule, StepDecay) {
  Schedule s;
  EXPECT_DOUBLE_EQ(lr_at_epoch(s, 0), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at_epoch(s, 29), 1e-3);
  EXPECT_NEAR(lr_at_epoch(s, 30), 1e-4, 1e-18);
  EXPECT_NEAR(lr_at_epoch(s, 90), 1e-6, 1e-20);
  EXPECT_NEAR(lr_at_epoch(s, 119), 1e-6, 1e-20);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(1);
  auto p = oracle::random({2, 3, 1, 1}, rng);
  const auto before = p;
  AdamState<double> st;
  adam_step<double>({&p}, {Tensor4<double>(p.shape())}, st, 1e-3);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepIsSignOfGradient) {
  Tensor4<double> p({1, 1, 1, 1}, 1.0);
  AdamState<double> st;
  adam_step<double>({&p}, {Tensor4<double>({1, 1, 1, 1}, 2.0)}, st, 1e-3);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(p[0], 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0], 0.999, 1e-6);
}

TEST(Adam, FirstStepScaleInvariant) {
  Rng rng(2);
  auto g = oracle::random({3, 2, 1, 1}, rng);
  Tensor4<double> g10(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g10[i] = 10 * g[i];
  Tensor4<double> a(g.shape(), 0.5), b(g.shape(), 0.5);
  AdamState<double> sa, sb;
  adam_step<double>({&a}, {g}, sa, 1e-3);
  adam_step<double>({&b}, {g10}, sb, 1e-3);
  EXPECT_LE(max_abs_diff(a, b), 1e-6);
}

TEST(Adam, SecondStepMatchesClosedForm) {
  Tensor4<double> p({1, 1, 1, 1}, 0.0);
  AdamState<double> st;
  adam_step<double>({&p}, {Tensor4<double>({1, 1, 1, 1}, 1.0)}, st, 0.1);
  adam_step<double>({&p}, {Tensor4<double>({1, 1, 1, 1}, -3.0)}, st, 0.1);
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * -3.0;
  const double v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0;
  const double step2 = 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p[0], -0.1 * 1.0 / (1.0 + 1e-8) - step2, 1e-14);
}

TEST(Adam, Errors) {
  Tensor4<double> p({1, 1, 2, 1}, 0.0);
  AdamState<double> st;
  EXPECT_THROW(adam_step<double>({&p}, {Tensor4<double>({1, 1, 1, 1})}, st, 1e-3), ShapeError);
  EXPECT_THROW(adam_step<double>({&p}, {}, st, 1e-3), ShapeError);
  Tensor4<double> bad(p.shape(), 0.0);
  bad[1] = NAN;
  try {
    adam_step<double>({&p}, {bad}, st, 1e-3, {"tail.weight"});
    FAIL() << "expected rejection";
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("tail.weight"), std::string::npos);
  }
  EXPECT_EQ(st.step, 0u);
}

TEST(Train, ZeroEpochsLeavesModel) {
  auto m = EraNet<double>::initialized(tiny(), 1);
  const auto before = save_params(m);
  TrainConfig cfg;
  cfg.epochs = 0;
  auto r = train(m, toy_data(2, 16, 1), cfg);
  EXPECT_TRUE(r.curve.empty());
  EXPECT_EQ(r.steps, 0u);
  EXPECT_EQ(save_params(m), before);
}

TEST(Train, DeterministicUnderSeed) {
  QuietWarnings q;
  const auto data = toy_data(6, 16, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 3;
  auto run = [&] {
    auto m = EraNet<double>::initialized(tiny(), cfg.seed);
    auto r = train(m, data, cfg);
    return std::make_pair(r, m.forward(data[0].degraded));
  };
  auto [a, out_a] = run();
  auto [b, out_b] = run();
  EXPECT_EQ(a.steps, 4u);
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(out_a, out_b);
  ASSERT_EQ(a.curve.size(), 2u);
  EXPECT_EQ(a.curve[1].epoch, 1u);
  for (double l : a.step_losses) EXPECT_TRUE(std::isfinite(l));
  EXPECT_NE(format_epoch(a.curve[0]).find("epoch=0 lr=0.001"), std::string::npos);
}

TEST(Train, MaxStepsAndEmptyData) {
  QuietWarnings q;
  auto m = EraNet<double>::initialized(tiny(), 2);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.max_steps = 3;
  cfg.batch = 2;
  EXPECT_EQ(train(m, toy_data(4, 16, 5), cfg).steps, 3u);
  EXPECT_THROW(train(m, Dataset<double>{}, cfg), ValueError);
  auto f = m.fused();
  EXPECT_THROW(train(f, toy_data(2, 16, 5), cfg), ValueError);
}

TEST(Train, EpochOrderIsPermutation) {
  auto o = epoch_order(10, 7, 3);
  auto sorted = o;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(o, epoch_order(10, 7, 3));
  EXPECT_NE(o, epoch_order(10, 7, 4));
}

TEST(Train, GradientClipping) {
  std::vector<Tensor4<double>> g{Tensor4<double>({1, 1, 1, 2}, std::vector<double>{3, 0}),
                                 Tensor4<double>({1, 1, 1, 1}, 4.0)};
  clip_by_global_norm(g, 1.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[1][0], 0.8, 1e-15);
  clip_by_global_norm(g, 5.0);
  EXPECT_NEAR(g[1][0], 0.8, 1e-15);
}

TEST(Evaluate, IdentityModelHasZeroDelta) {
  auto m = EraNet<double>::initialized(tiny(), 3);
  m.params().tail.weight.fill(0);
  m.params().tail.bias.fill(0);
  const auto data = toy_data(4, 16, 9);
  auto r = evaluate(m, data);
  ASSERT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.psnr_delta(), 0.0);
    EXPECT_EQ(row.ssim_delta(), 0.0);
  }
  EXPECT_EQ(r.mean_psnr_delta, 0.0);
}

TEST(Evaluate, CleanPairIsPerfect) {
  auto m = EraNet<double>::initialized(tiny(), 3);
  auto img = procedural_set<double>(1, 16, 16, 4)[0];
  Dataset<double> d{{img, img, Scene::haze, ""}};
  auto r = evaluate(m, d);
  EXPECT_TRUE(std::isinf(r.rows[0].psnr_in));
  EXPECT_DOUBLE_EQ(r.rows[0].ssim_in, 1.0);
}

TEST(Ablation, GridsCompleteAndReport) {
  QuietWarnings q;
  EXPECT_EQ(module_ablation(tiny()).size(), 8u);
  EXPECT_EQ(operator_ablation(tiny()).size(), 5u);
  EXPECT_EQ(loss_ablation(tiny()).size(), 4u);
  std::vector<AblationVariant> all = module_ablation(tiny());
  for (auto& v : operator_ablation(tiny())) all.push_back(v);
  for (auto& v : loss_ablation(tiny())) all.push_back(v);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.max_steps = 1;
  cfg.batch = 2;
  std::size_t seen = 0;
  auto rows = run_ablation(all, toy_data(2, 12, 1), toy_data(1, 12, 2), cfg, [&](const AblationRow&) { ++seen; });
  EXPECT_EQ(rows.size(), all.size());
  EXPECT_EQ(seen, all.size());
  for (const auto& r : rows) {
    EXPECT_GT(r.params, 0u);
    EXPECT_TRUE(std::isfinite(r.final_loss));
    EXPECT_TRUE(std::isfinite(r.psnr_delta));
  }
}
