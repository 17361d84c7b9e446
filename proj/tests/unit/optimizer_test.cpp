#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "vaeseg/optimizer.hpp"
#include "vaeseg/trainer.hpp"

using namespace vaeseg;
using vaeseg::testing::random_tensor;

TEST(Schedule, Examples) {
  const Schedule s{1e-4, 300, 0.9};
  EXPECT_EQ(s.lr_at(0), 1e-4);
  EXPECT_EQ(s.lr_at(300), 0.0);
  // 5.359e-5 is 0.5^0.9 * 1e-4 rounded to four digits
  EXPECT_NEAR(s.lr_at(150), 5.359e-5, 0.5e-8);
  EXPECT_NEAR(s.lr_at(150), 1e-4 * std::exp(0.9 * std::log(0.5)), 1e-18);
  EXPECT_THROW(s.lr_at(-1), std::out_of_range);
  EXPECT_THROW(s.lr_at(301), std::out_of_range);
}

TEST(Schedule, MonotoneOnIntegerGrid) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Schedule s{rng.uniform(1e-5, 1e-2), rng.uniform_int(1, 400), rng.uniform(0.1, 2.0)};
    for (std::int64_t e = 1; e <= s.total_epochs; ++e) ASSERT_LE(s.lr_at(e), s.lr_at(e - 1));
    EXPECT_EQ(s.lr_at(s.total_epochs), 0.0);
  }
}

TEST(ConvKernelPredicate, SelectsOnlyConvWeights) {
  EXPECT_TRUE(is_conv_kernel("encoder.L0.B0.conv1.weight"));
  EXPECT_TRUE(is_conv_kernel("decoder.head.conv.weight"));
  EXPECT_FALSE(is_conv_kernel("encoder.L0.B0.conv1.bias"));
  EXPECT_FALSE(is_conv_kernel("encoder.L0.B0.gn1.gamma"));
  EXPECT_FALSE(is_conv_kernel("encoder.L0.B0.gn1.beta"));
  EXPECT_FALSE(is_conv_kernel("vae.VD.dense.weight"));
}

TEST(Adam, FirstStepIsLearningRate) {
  ParameterSet p;
  p.add("w", Tensor(Shape{3}, std::vector<float>{0.5f, -1.0f, 2.0f}));
  AdamState st;
  adam_step(p, {{"w", Tensor(Shape{3}, 1.0f)}}, st, 0.1, 0.0);
  EXPECT_NEAR(p.at("w")[0], 0.4, 1e-6);
  EXPECT_NEAR(p.at("w")[1], -1.1, 1e-6);
  EXPECT_NEAR(p.at("w")[2], 1.9, 1e-6);
  EXPECT_EQ(st.step, 1);
  EXPECT_EQ(st.moments.at("w").m.shape(), (Shape{3}));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterSet p;
  Rng rng(2);
  p.add("a.conv.weight", random_tensor({2, 1, 1, 1, 1}, rng));
  const Tensor before = p.at("a.conv.weight");
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(p, {{"a.conv.weight", Tensor::zeros({2, 1, 1, 1, 1})}}, st, 0.1, 0.0);
  EXPECT_EQ(p.at("a.conv.weight").storage(), before.storage());
}

TEST(Adam, DecayOnlyOnKernels) {
  ParameterSet p;
  p.add("x.conv.weight", Tensor(Shape{1, 1, 1, 1, 1}, 3.0f));
  p.add("x.conv.bias", Tensor(Shape{1}, 3.0f));
  p.add("x.gn.gamma", Tensor(Shape{1}, 3.0f));
  p.add("x.gn.beta", Tensor(Shape{1}, 3.0f));
  std::map<std::string, Tensor> zero;
  for (const auto& [n, t] : p) zero[n] = Tensor::zeros(t.shape());
  AdamState st;
  adam_step(p, zero, st, 0.01, 1e-5);
  EXPECT_LT(p.at("x.conv.weight")[0], 3.0f);
  EXPECT_EQ(p.at("x.conv.bias")[0], 3.0f);
  EXPECT_EQ(p.at("x.gn.gamma")[0], 3.0f);
  EXPECT_EQ(p.at("x.gn.beta")[0], 3.0f);
}

TEST(Adam, DecayShrinksAnyNonzeroKernel) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    ParameterSet p;
    Tensor w = random_tensor({2, 2, 1, 1, 1}, rng, -5, 5);
    if (trial % 3 == 0) w = Tensor(w.shape(), std::vector<float>{0, 0, 0, static_cast<float>(rng.uniform(0.1, 1))});
    p.add("k.conv.weight", w);
    auto norm2 = [](const Tensor& t) {
      double s = 0;
      for (float v : t.data()) s += double(v) * v;
      return s;
    };
    const double before = norm2(w);
    AdamState st;
    adam_step(p, {{"k.conv.weight", Tensor::zeros(w.shape())}}, st, 1e-3, 1e-5);
    EXPECT_LT(norm2(p.at("k.conv.weight")), before);
  }
}

TEST(Adam, ConvergesOnQuadratic) {
  ParameterSet p;
  p.add("w", Tensor(Shape{2}, std::vector<float>{3.0f, 4.0f}));
  AdamState st;
  int steps = 0;
  for (; steps < 2000; ++steps) {
    const Tensor& w = p.at("w");
    if (std::hypot(w[0], w[1]) < 1e-2) break;
    Tensor g = w;
    for (auto& v : g.data()) v *= 2.0f;
    adam_step(p, {{"w", g}}, st, 0.05, 0.0);
  }
  EXPECT_LT(std::hypot(p.at("w")[0], p.at("w")[1]), 1e-2);
  EXPECT_LT(steps, 2000);
}

TEST(Adam, RejectsMismatchedGradients) {
  ParameterSet p;
  p.add("w", Tensor(Shape{2}, 1.0f));
  AdamState st;
  EXPECT_THROW(adam_step(p, {{"w", Tensor(Shape{3}, 1.0f)}}, st, 0.1, 0.0), ShapeError);
  EXPECT_THROW(adam_step(p, {{"v", Tensor(Shape{2}, 1.0f)}}, st, 0.1, 0.0), std::invalid_argument);
  EXPECT_EQ(st.step, 0);
}

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.base_filters = 4;
  c.blocks_per_level = {1, 1};
  c.crop_shape = {8, 8, 8};
  return c;
}

std::vector<Sample> tiny_dataset(std::size_t n) {
  std::vector<Sample> ds;
  for (std::size_t i = 0; i < n; ++i) {
    const Phantom ph = gen_phantom(40 + i, 16, Difficulty::kLow);
    ds.push_back({"c" + std::to_string(i), normalize(ph.volume), labels_to_channels(ph.labels)});
  }
  return ds;
}

}  // namespace

TEST(TrainEpoch, OneStepPerSampleAtEpochRate) {
  Model m = build_model(tiny_config(), 1);
  const auto ds = tiny_dataset(3);
  AdamState st;
  const Schedule sched{1e-3, 10, 0.9};
  const EpochStats s = train_epoch(m, ds, Rng(5), st, sched, 4, {});
  EXPECT_EQ(s.steps, 3);
  EXPECT_EQ(st.step, 3);
  EXPECT_EQ(s.epoch, 4);
  EXPECT_EQ(s.lr, sched.lr_at(4));
  EXPECT_TRUE(std::isfinite(s.mean.total));
  EXPECT_NEAR(s.mean.total, s.mean.dice + 0.1 * s.mean.l2 + 0.1 * s.mean.kl, 1e-9);
}

TEST(TrainEpoch, DeterministicGivenSeeds) {
  const auto ds = tiny_dataset(2);
  auto run = [&] {
    Model m = build_model(tiny_config(), 7);
    AdamState st;
    const Schedule sched{1e-3, 3, 0.9};
    for (std::int64_t e = 0; e < 2; ++e) train_epoch(m, ds, Rng(11), st, sched, e, {});
    return std::pair{m.params, st};
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(a.first == b.first);
  EXPECT_TRUE(a.second == b.second);
}

TEST(TrainEpoch, RejectsEmptyDataset) {
  Model m = build_model(tiny_config(), 1);
  AdamState st;
  EXPECT_THROW(train_epoch(m, {}, Rng(1), st, Schedule{}, 0, {}), std::invalid_argument);
}
