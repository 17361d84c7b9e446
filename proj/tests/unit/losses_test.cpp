#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "vaeseg/grad_check.hpp"
#include "vaeseg/losses.hpp"
#include "vaeseg/model.hpp"
#include "vaeseg/trainer.hpp"

using namespace vaeseg;
using vaeseg::testing::random_binary;
using vaeseg::testing::random_tensor;

namespace {

double eval(Var v) { return v.graph().scalar_f64(v.id()); }

Tensor channel_stack(const Tensor& a, const Tensor& b, const Tensor& c) {
  Tensor out({3, a.dim(0), a.dim(1), a.dim(2)});
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = a[i];
    out[n + i] = b[i];
    out[2 * n + i] = c[i];
  }
  return out;
}

// Plain-loop reference for the soft dice coefficient.
double reference_dice(const Tensor& p, const Tensor& t, double eps) {
  double num = 0.0, tt = 0.0, pp = 0.0;
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    num += static_cast<double>(p[i]) * t[i];
    tt += static_cast<double>(t[i]) * t[i];
    pp += static_cast<double>(p[i]) * p[i];
  }
  return 2.0 * num / (tt + pp + eps);
}

}  // namespace

TEST(Dice, PerfectOverlap) {
  Graph g;
  const Tensor ones({2, 2, 2}, 1.0f);
  const double eps = 1e-8;
  const double d = eval(dice_coefficient(make_leaf(g, ones, false), make_leaf(g, ones, false), eps));
  EXPECT_NEAR(d, 16.0 / (16.0 + eps), 1e-15);
}

TEST(Dice, DisjointIsZero) {
  Graph g;
  const Tensor a(Shape{4}, std::vector<float>{1, 1, 0, 0});
  const Tensor b(Shape{4}, std::vector<float>{0, 0, 1, 1});
  EXPECT_EQ(eval(dice_coefficient(make_leaf(g, a, false), make_leaf(g, b, false), 1e-8)), 0.0);
}

TEST(Dice, HandEvaluation) {
  Graph g;
  const Tensor t(Shape{2}, std::vector<float>{1, 0});
  const Tensor p(Shape{2}, std::vector<float>{0.5f, 0.5f});
  // eps must be positive in LossWeights but the op itself accepts 0
  EXPECT_NEAR(eval(dice_coefficient(make_leaf(g, p, false), make_leaf(g, t, false), 0.0)), 1.0 / 1.5, 1e-12);
}

TEST(Dice, SymmetricAndBounded) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = random_tensor({3, 4, 5}, rng, 0.0, 1.0);
    const Tensor b = trial % 2 ? random_binary({3, 4, 5}, rng) : random_tensor({3, 4, 5}, rng, 0.0, 1.0);
    Graph g;
    Var va = make_leaf(g, a, false), vb = make_leaf(g, b, false);
    const double ab = eval(dice_coefficient(va, vb, 1e-8));
    const double ba = eval(dice_coefficient(vb, va, 1e-8));
    EXPECT_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_NEAR(ab, reference_dice(a, b, 1e-8), 1e-12);
  }
}

TEST(DiceLoss, Examples) {
  Tensor half({2, 2, 2}, 0.0f);
  for (std::int64_t i = 0; i < 4; ++i) half[i] = 1.0f;
  Tensor other_half({2, 2, 2}, 1.0f);
  for (std::int64_t i = 0; i < 4; ++i) other_half[i] = 0.0f;

  Graph g;
  const Tensor target = channel_stack(half, half, half);
  EXPECT_NEAR(eval(dice_loss(make_leaf(g, target, false), make_leaf(g, target, false), 1e-8)), 0.0, 1e-8);
  const Tensor disjoint = channel_stack(other_half, other_half, other_half);
  EXPECT_EQ(eval(dice_loss(make_leaf(g, disjoint, false), make_leaf(g, target, false), 1e-8)), 3.0);
  const Tensor mixed = channel_stack(half, other_half, other_half);
  EXPECT_NEAR(eval(dice_loss(make_leaf(g, mixed, false), make_leaf(g, target, false), 1e-8)), 2.0, 1e-8);
}

TEST(DiceLoss, RangeAndShapeChecks) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Graph g;
    const double v = eval(dice_loss(make_leaf(g, random_tensor({3, 3, 3, 3}, rng, 0, 1), false),
                                    make_leaf(g, random_binary({3, 3, 3, 3}, rng), false), 1e-8));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 3.0);
  }
  Graph g;
  EXPECT_THROW(dice_loss(make_leaf(g, Tensor({2, 2, 2, 2}), false), make_leaf(g, Tensor({2, 2, 2, 2}), false), 1e-8),
               ShapeError);
}

TEST(L2Loss, Examples) {
  Graph g;
  const Tensor x(Shape{2}, std::vector<float>{1, 1});
  const Tensor r = Tensor::zeros({2});
  EXPECT_EQ(eval(l2_recon_loss(make_leaf(g, x, false), make_leaf(g, x, false), Reduction::kSum)), 0.0);
  EXPECT_EQ(eval(l2_recon_loss(make_leaf(g, r, false), make_leaf(g, x, false), Reduction::kSum)), 2.0);
  EXPECT_EQ(eval(l2_recon_loss(make_leaf(g, r, false), make_leaf(g, x, false), Reduction::kMean)), 1.0);
  EXPECT_THROW(l2_recon_loss(make_leaf(g, Tensor::zeros({3}), false), make_leaf(g, x, false), Reduction::kSum),
               ShapeError);
}

TEST(KlLoss, Examples) {
  Graph g;
  EXPECT_EQ(eval(kl_loss(make_leaf(g, Tensor::zeros({5}), false), make_leaf(g, Tensor::zeros({5}), false), 1.0)), 0.0);
  EXPECT_EQ(eval(kl_loss(make_leaf(g, Tensor::scalar(1.0f), false), make_leaf(g, Tensor::scalar(0.0f), false), 1.0)),
            1.0);
  EXPECT_NEAR(eval(kl_loss(make_leaf(g, Tensor::scalar(0.0f), false), make_leaf(g, Tensor::scalar(1.0f), false), 1.0)),
              std::numbers::e - 2.0, 1e-12);
  EXPECT_THROW(kl_loss(make_leaf(g, Tensor::zeros({2}), false), make_leaf(g, Tensor::zeros({2}), false), 0.0),
               std::invalid_argument);
}

TEST(KlLoss, NonNegativeOnRandomLatents) {
  Rng rng(77);
  for (int trial = 0; trial < 10000; ++trial) {
    Graph g;
    const Tensor mu = random_tensor({4}, rng, -3, 3);
    const Tensor lv = random_tensor({4}, rng, -6, 4);
    EXPECT_GE(eval(kl_loss(make_leaf(g, mu, false), make_leaf(g, lv, false), rng.uniform(1, 1000))), 0.0);
  }
}

TEST(KlLoss, MatchesMonteCarloForOneLatent) {
  // The penalty sums mu^2 + s^2 - log s^2 - 1, which is twice KL(N(mu, s^2) || N(0, 1)).
  Rng rng(5);
  const Tensor mu = random_tensor({8}, rng, -1.5, 1.5);
  const Tensor lv = random_tensor({8}, rng, -1.5, 1.5);
  Graph g;
  const double closed = eval(kl_loss(make_leaf(g, mu, false), make_leaf(g, lv, false), 1.0));
  double acc = 0.0;
  const int samples = 100000;
  for (int s = 0; s < samples; ++s) {
    double logq = 0.0, logp = 0.0;
    for (std::int64_t i = 0; i < 8; ++i) {
      const double sd = std::exp(0.5 * lv[i]);
      const double e = rng.normal();
      const double z = mu[i] + sd * e;
      logq += -0.5 * e * e - std::log(sd);
      logp += -0.5 * z * z;
    }
    acc += logq - logp;
  }
  const double mc = acc / samples;
  EXPECT_NEAR(closed / 2.0, mc, 0.01 * mc);
}

TEST(TotalLoss, Examples) {
  Graph g;
  const Tensor tgt = channel_stack(Tensor({2, 2, 2}, 1.0f), Tensor({2, 2, 2}, 1.0f), Tensor({2, 2, 2}, 1.0f));
  Rng rng(1);
  const Tensor img = random_tensor({4, 2, 2, 2}, rng);
  Var t = make_leaf(g, tgt, false), x = make_leaf(g, img, false);
  Var mu = make_leaf(g, Tensor::zeros({4}), false), lv = make_leaf(g, Tensor::zeros({4}), false);
  EXPECT_NEAR(eval(total_loss(t, t, x, x, mu, lv, LossWeights{}, 8.0).total), 0.0, 1e-8);

  // Weights (0, 0) leave the dice term alone.
  const Tensor pred = random_tensor({3, 2, 2, 2}, rng, 0, 1);
  Var p = make_leaf(g, pred, false);
  Var r = make_leaf(g, random_tensor({4, 2, 2, 2}, rng), false);
  Var m2 = make_leaf(g, random_tensor({4}, rng), false);
  LossWeights w0;
  w0.w_l2 = 0.0;
  w0.w_kl = 0.0;
  const LossTerms t0 = total_loss(p, t, r, x, m2, lv, w0, 8.0);
  EXPECT_EQ(eval(t0.total), eval(t0.dice));

  // dice 1.0, l2 2.0, kl 0.5 under (0.1, 0.1)
  Var d1 = make_leaf(g, Tensor::scalar(1.0f), false);
  Var l2 = make_leaf(g, Tensor::scalar(2.0f), false);
  Var kl = make_leaf(g, Tensor::scalar(0.5f), false);
  EXPECT_NEAR(eval(ops::linear_combination({d1, l2, kl}, {1.0, 0.1, 0.1})), 1.25, 1e-12);
  const LossTerms full = total_loss(p, t, r, x, m2, lv, LossWeights{}, 8.0);
  EXPECT_NEAR(eval(full.total), eval(full.dice) + 0.1 * eval(full.l2) + 0.1 * eval(full.kl), 1e-12);
}

TEST(TotalLoss, RejectsNegativeWeights) {
  Graph g;
  Var a = make_leaf(g, Tensor({3, 1, 1, 1}, 0.5f), false);
  Var x = make_leaf(g, Tensor({4, 1, 1, 1}, 0.5f), false);
  Var m = make_leaf(g, Tensor::zeros({2}), false);
  LossWeights w;
  w.w_l2 = -0.1;
  EXPECT_THROW(total_loss(a, a, x, x, m, m, w, 1.0), std::invalid_argument);
}

TEST(LossGradients, EachLossPassesGradCheck) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const Tensor t = random_binary({3, 2, 3, 2}, rng, 0.4);
    const Tensor p = random_tensor({3, 2, 3, 2}, rng, 0.05, 0.95);
    const auto dl = grad_check([&](Graph& g, Var v) { return dice_loss(v, make_leaf(g, t, false), 1e-8); }, p, 1e-3);
    EXPECT_LT(dl.max_relative_error, 1e-3) << "dice seed " << seed;

    const Tensor x = random_tensor({4, 2, 2, 2}, rng);
    const Tensor r = random_tensor({4, 2, 2, 2}, rng);
    const auto l2 = grad_check(
        [&](Graph& g, Var v) { return l2_recon_loss(v, make_leaf(g, x, false), Reduction::kMean); }, r, 1e-3);
    EXPECT_LT(l2.max_relative_error, 1e-3) << "l2 seed " << seed;

    const Tensor mu = random_tensor({6}, rng), lv = random_tensor({6}, rng);
    const auto km = grad_check([&](Graph& g, Var v) { return kl_loss(v, make_leaf(g, lv, false), 64.0); }, mu, 1e-3);
    const auto kv = grad_check([&](Graph& g, Var v) { return kl_loss(make_leaf(g, mu, false), v, 64.0); }, lv, 1e-3);
    EXPECT_LT(km.max_relative_error, 1e-3) << "kl mu seed " << seed;
    EXPECT_LT(kv.max_relative_error, 1e-3) << "kl logvar seed " << seed;
  }
}
