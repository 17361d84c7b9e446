#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "test_support.hpp"
#include "vaeseg/losses.hpp"
#include "vaeseg/model.hpp"
#include "vaeseg/trainer.hpp"

using namespace vaeseg;
using vaeseg::testing::random_binary;
using vaeseg::testing::random_tensor;

namespace {

ModelConfig small_config(std::int64_t f = 4, std::int64_t crop = 16) {
  ModelConfig c;
  c.base_filters = f;
  c.crop_shape = {crop, crop, crop};
  return c;
}

std::map<std::string, Shape> shape_table(const ModelConfig& c) {
  std::map<std::string, Shape> m;
  for (const auto& [name, shape] : parameter_shapes(c)) m[name] = shape;
  return m;
}

Shape row(const std::vector<LayerShape>& rows, const std::string& name) {
  for (const auto& r : rows)
    if (r.name == name) return r.shape;
  ADD_FAILURE() << "missing row " << name;
  return {};
}

}  // namespace

TEST(ModelConfig, DerivedSizes) {
  const ModelConfig p = ModelConfig::full_scale();
  EXPECT_EQ(p.base_filters, 32);
  EXPECT_EQ(p.endpoint_channels(), 256);
  EXPECT_EQ(p.latent(), 256);
  EXPECT_EQ(p.latent_half(), 128);
  EXPECT_EQ(p.vd_channels(), 16);
  EXPECT_EQ(small_config(8, 32).endpoint_channels(), 64);
}

TEST(ModelConfig, RejectsBadCrops) {
  ModelConfig c = small_config();
  c.crop_shape = {20, 16, 16};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.base_filters = 6;  // 12 channels cannot split into 8 groups
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InferShapes, PaperEncoderEndpoint) {
  const auto rows = infer_shapes(ModelConfig::full_scale(), {4, 160, 192, 128});
  EXPECT_EQ(row(rows, "EncL3"), (Shape{256, 20, 24, 16}));
}

TEST(InferShapes, PaperVaeRows) {
  const auto rows = infer_shapes(ModelConfig::full_scale(), {4, 160, 192, 128});
  EXPECT_EQ(row(rows, "VD"), (Shape{256}));
  EXPECT_EQ(row(rows, "VDraw"), (Shape{128}));
  EXPECT_EQ(row(rows, "VU"), (Shape{256, 20, 24, 16}));
  EXPECT_EQ(row(rows, "VUp2"), (Shape{128, 40, 48, 32}));
  EXPECT_EQ(row(rows, "VBlock2"), (Shape{128, 40, 48, 32}));
  EXPECT_EQ(row(rows, "VUp1"), (Shape{64, 80, 96, 64}));
  EXPECT_EQ(row(rows, "VBlock1"), (Shape{64, 80, 96, 64}));
  EXPECT_EQ(row(rows, "VUp0"), (Shape{32, 160, 192, 128}));
  EXPECT_EQ(row(rows, "VBlock0"), (Shape{32, 160, 192, 128}));
  EXPECT_EQ(row(rows, "Vend"), (Shape{4, 160, 192, 128}));
}

TEST(InferShapes, DeskScaling) {
  const auto rows = infer_shapes(small_config(8, 32), {4, 32, 32, 32});
  EXPECT_EQ(row(rows, "EncL3"), (Shape{64, 4, 4, 4}));
  EXPECT_EQ(row(rows, "SegHead"), (Shape{3, 32, 32, 32}));
  EXPECT_THROW(infer_shapes(small_config(8, 32), {4, 20, 32, 32}), ShapeError);
  EXPECT_THROW(infer_shapes(small_config(8, 32), {3, 32, 32, 32}), ShapeError);
}

TEST(InferShapes, AgreesWithForward) {
  const ModelConfig c = small_config(4, 16);
  const Model m = build_model(c, 3);
  Rng rng(1);
  const Tensor x = random_tensor({4, 16, 16, 16}, rng);
  Graph g;
  BoundParameters bp(g, m.params, false);
  Rng fr(2);
  const ForwardOutputs out = forward(c, bp, make_leaf(g, x, false), fr, false);
  const auto rows = infer_shapes(c, x.shape());
  EXPECT_EQ(out.seg_probs.shape(), row(rows, "SegHead"));
  EXPECT_EQ(out.recon.shape(), row(rows, "Vend"));
  EXPECT_EQ(out.mu.shape(), row(rows, "VDraw"));
  EXPECT_EQ(out.logvar.shape(), row(rows, "VDraw"));
}

TEST(BuildModel, SameSeedBitIdentical) {
  const ModelConfig c = small_config();
  EXPECT_TRUE(build_model(c, 9).params == build_model(c, 9).params);
  EXPECT_FALSE(build_model(c, 9).params == build_model(c, 10).params);
}

TEST(BuildModel, InitializationRules) {
  const Model m = build_model(small_config(), 5);
  for (const auto& [name, t] : m.params) {
    const std::string_view n = name;
    if (n.ends_with(".bias") || n.ends_with(".beta")) {
      for (float v : t.data()) ASSERT_EQ(v, 0.0f) << name;
    } else if (n.ends_with(".gamma")) {
      for (float v : t.data()) ASSERT_EQ(v, 1.0f) << name;
    } else {
      const std::int64_t fan_in = t.numel() / t.dim(0);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      double maxabs = 0.0;
      for (float v : t.data()) maxabs = std::max(maxabs, std::abs(static_cast<double>(v)));
      EXPECT_LE(maxabs, bound) << name;
      if (t.numel() >= 64) {
        EXPECT_GT(maxabs, 0.5 * bound) << name;
      }
    }
  }
}

TEST(BuildModel, ShapesMatchTable) {
  const ModelConfig c = small_config();
  const Model m = build_model(c, 1);
  const auto shapes = parameter_shapes(c);
  ASSERT_EQ(shapes.size(), m.params.size());
  for (const auto& [name, shape] : shapes) EXPECT_EQ(m.params.at(name).shape(), shape) << name;
  EXPECT_TRUE(m.params.contains("encoder.L0.B0.conv1.weight"));
  EXPECT_TRUE(m.params.contains("encoder.L3.B3.conv2.bias"));
  EXPECT_FALSE(m.params.contains("encoder.L3.B4.conv2.bias"));
}

TEST(BuildModel, CropChangesOnlyVaeDenseInput) {
  const auto a = shape_table(small_config(4, 16));
  const auto b = shape_table(small_config(4, 32));
  ASSERT_EQ(a.size(), b.size());
  std::vector<std::string> differing;
  for (const auto& [name, shape] : a) {
    ASSERT_TRUE(b.contains(name)) << name;
    if (b.at(name) != shape) differing.push_back(name);
  }
  // VU mirrors VD, so its dense output grows too
  ASSERT_EQ(differing.size(), 3u);
  EXPECT_EQ(differing, (std::vector<std::string>{"vae.VD.dense.weight", "vae.VU.dense.bias", "vae.VU.dense.weight"}));
  EXPECT_EQ(a.at("vae.VD.dense.weight")[0], b.at("vae.VD.dense.weight")[0]);
  // flatten size is vd_channels * (crop / 16)^3
  EXPECT_EQ(a.at("vae.VD.dense.weight")[1], 2 * 1 * 1 * 1);
  EXPECT_EQ(b.at("vae.VD.dense.weight")[1], 2 * 2 * 2 * 2);
}

TEST(Forward, ShapesAndRanges) {
  const ModelConfig c = small_config(8, 32);
  const Model m = build_model(c, 4);
  Rng rng(3);
  const Tensor x = random_tensor({4, 32, 32, 32}, rng);
  Graph g;
  BoundParameters bp(g, m.params, false);
  const ForwardOutputs out = forward(c, bp, make_leaf(g, x, false), rng, true);
  EXPECT_EQ(out.seg_probs.shape(), (Shape{3, 32, 32, 32}));
  EXPECT_EQ(out.recon.shape(), (Shape{4, 32, 32, 32}));
  EXPECT_EQ(out.mu.shape(), (Shape{32}));
  EXPECT_EQ(out.logvar.shape(), (Shape{32}));
  // f32 sigmoid saturates to exactly 0 or 1 for large logits
  for (float v : out.seg_probs.value().data()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Forward, InferenceModeDeterministic) {
  const ModelConfig c = small_config();
  const Model m = build_model(c, 4);
  Rng rng(8);
  const Tensor x = random_tensor({4, 16, 16, 16}, rng);
  auto run = [&](std::uint64_t seed) {
    Graph g;
    BoundParameters bp(g, m.params, false);
    Rng r(seed);
    const ForwardOutputs o = forward(c, bp, make_leaf(g, x, false), r, false);
    return std::pair{o.seg_probs.value(), o.recon.value()};
  };
  const auto a = run(1), b = run(99);
  EXPECT_EQ(a.first.storage(), b.first.storage());
  EXPECT_EQ(a.second.storage(), b.second.storage());
}

TEST(Forward, SegOnlyMatchesFullForwardBitwise) {
  const ModelConfig c = small_config();
  const Model m = build_model(c, 6);
  Rng rng(2);
  const Tensor x = random_tensor({4, 16, 16, 16}, rng);
  Graph g;
  BoundParameters bp(g, m.params, false);
  const ForwardOutputs full = forward(c, bp, make_leaf(g, x, false), rng, false);
  const Tensor seg = predict_probabilities(m, x);
  EXPECT_EQ(full.seg_probs.value().storage(), seg.storage());
}

TEST(Forward, SegOnlyWithoutVaeParameters) {
  const ModelConfig c = small_config();
  const Model full = build_model(c, 6);
  const Model seg_only{c, full.params.without_prefix("vae.")};
  EXPECT_LT(seg_only.params.size(), full.params.size());
  Rng rng(2);
  const Tensor x = random_tensor({4, 16, 16, 16}, rng);
  EXPECT_EQ(predict_probabilities(seg_only, x).storage(), predict_probabilities(full, x).storage());
}

TEST(Forward, SegOnlyAcceptsOtherSizes) {
  const Model m = build_model(small_config(8, 32), 1);
  Rng rng(4);
  EXPECT_EQ(predict_probabilities(m, random_tensor({4, 16, 16, 16}, rng)).shape(), (Shape{3, 16, 16, 16}));
  EXPECT_EQ(predict_probabilities(m, random_tensor({4, 8, 16, 24}, rng)).shape(), (Shape{3, 8, 16, 24}));
  EXPECT_THROW(predict_probabilities(m, random_tensor({4, 12, 16, 16}, rng)), ShapeError);
}

TEST(ParameterGroups, ArePartition) {
  for (const auto& [name, shape] : parameter_shapes(small_config())) {
    const int hits = int(is_encoder_parameter(name)) + int(is_decoder_parameter(name)) + int(is_vae_parameter(name));
    EXPECT_EQ(hits, 1) << name;
  }
}

namespace {

// Gradients of one training step with the given loss weights, dropout off.
std::map<std::string, Tensor> pathway_grads(double w_dice, double w_vae) {
  ModelConfig c = small_config(4, 16);
  c.dropout_rate = 0.0;
  const Model m = build_model(c, 12);
  Rng rng(21);
  const Volume crop{random_tensor({4, 16, 16, 16}, rng)};
  const Tensor target = random_binary({3, 16, 16, 16}, rng, 0.3);
  TrainOptions opt;
  opt.weights.w_dice = w_dice;
  opt.weights.w_l2 = w_vae;
  opt.weights.w_kl = w_vae;
  Rng step(5);
  return compute_gradients(m, crop, target, step, opt).grads;
}

bool all_zero(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return v == 0.0f; });
}

}  // namespace

TEST(RegularizationPathway, VaeLossesReachEncoderOnly) {
  for (const auto& [name, g] : pathway_grads(0.0, 0.1)) {
    if (is_decoder_parameter(name)) {
      EXPECT_TRUE(all_zero(g)) << name;
    } else if (is_encoder_parameter(name)) {
      EXPECT_FALSE(all_zero(g)) << name;
    }
  }
}

TEST(RegularizationPathway, DiceLossSkipsVaeBranch) {
  for (const auto& [name, g] : pathway_grads(1.0, 0.0)) {
    if (is_vae_parameter(name)) {
      EXPECT_TRUE(all_zero(g)) << name;
    } else {
      EXPECT_FALSE(all_zero(g)) << name;
    }
  }
}
