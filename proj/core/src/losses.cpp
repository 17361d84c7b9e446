#include "vaeseg/losses.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "vaeseg/ops.hpp"

namespace vaeseg {

void LossWeights::validate() const {
  if (w_dice < 0.0 || w_l2 < 0.0 || w_kl < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  if (!(dice_eps > 0.0)) throw std::invalid_argument("dice eps must be positive");
}

namespace {

struct DiceSums {
  double tp = 0.0, tt = 0.0, pp = 0.0;
};

template <typename T>
DiceSums dice_sums(const T* p, const T* t, std::int64_t n) {
  DiceSums s;
  for (std::int64_t i = 0; i < n; ++i) {
    s.tp += static_cast<double>(t[i]) * p[i];
    s.tt += static_cast<double>(t[i]) * t[i];
    s.pp += static_cast<double>(p[i]) * p[i];
  }
  return s;
}

// d dice / d p_i = 2 t_i / den − 2 num p_i / den², with num = Σ t p.
// The coefficient is symmetric, so the truth gradient swaps the roles.
void dice_grad(const float* p, const float* t, std::int64_t n, const DiceSums& s, double eps, double upstream,
               float* gp, float* gt) {
  const double den = s.tt + s.pp + eps;
  const double a = 2.0 * upstream / den;
  const double b = 2.0 * upstream * 2.0 * s.tp / (den * den);
  for (std::int64_t i = 0; i < n; ++i) {
    if (gp) gp[i] += static_cast<float>(a * t[i] - b * p[i]);
    if (gt) gt[i] += static_cast<float>(a * p[i] - b * t[i]);
  }
}

Graph& same_graph(std::initializer_list<Var> vars) {
  Graph* g = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw std::invalid_argument("loss received an unbound Var");
    if (g && g != &v.graph()) throw std::invalid_argument("loss inputs belong to different graphs");
    g = &v.graph();
  }
  return *g;
}

}  // namespace

Var dice_coefficient(Var pred, Var truth, double eps) {
  Graph& g = same_graph({pred, truth});
  check_same_shape(pred.value(), truth.value(), "dice_coefficient");
  const std::int64_t n = pred.value().numel();
  const DiceSums s = g.track_f64() ? dice_sums(g.wide(pred.id()).data(), g.wide(truth.id()).data(), n)
                                   : dice_sums(pred.value().raw(), truth.value().raw(), n);
  const double dice = 2.0 * s.tp / (s.tt + s.pp + eps);
  const NodeId id = g.record("dice_coefficient", {pred.id(), truth.id()}, Tensor::scalar(static_cast<float>(dice)),
                             [s, eps, n](const BackwardContext& ctx) {
                               dice_grad(ctx.input(0).raw(), ctx.input(1).raw(), n, s, eps, ctx.grad_output[0],
                                         ctx.needs(0) ? ctx.grad(0).raw() : nullptr,
                                         ctx.needs(1) ? ctx.grad(1).raw() : nullptr);
                             });
  g.set_scalar_f64(id, dice);
  return {g, id};
}

Var dice_loss(Var seg_probs, Var target, double eps) {
  Graph& g = same_graph({seg_probs, target});
  check_same_shape(seg_probs.value(), target.value(), "dice_loss");
  const Tensor& p = seg_probs.value();
  if (p.rank() != 4 || p.dim(0) != 3) throw ShapeError("dice_loss: expected [3,D,H,W], got " + shape_to_string(p.shape()));
  const std::int64_t vox = p.numel() / 3;
  std::array<DiceSums, 3> sums;
  for (std::int64_t c = 0; c < 3; ++c)
    sums[static_cast<std::size_t>(c)] = dice_sums(p.raw() + c * vox, target.value().raw() + c * vox, vox);
  // Backward keeps the f32 sums; the reported value follows the shadows.
  std::array<DiceSums, 3> value_sums = sums;
  if (g.track_f64()) {
    const std::vector<double> wp = g.wide(seg_probs.id()), wt = g.wide(target.id());
    for (std::int64_t c = 0; c < 3; ++c)
      value_sums[static_cast<std::size_t>(c)] = dice_sums(wp.data() + c * vox, wt.data() + c * vox, vox);
  }
  double loss = 0.0;
  for (const DiceSums& s : value_sums) loss += 1.0 - 2.0 * s.tp / (s.tt + s.pp + eps);
  const NodeId id = g.record("dice_loss", {seg_probs.id(), target.id()}, Tensor::scalar(static_cast<float>(loss)),
                             [sums, eps, vox](const BackwardContext& ctx) {
                               for (std::int64_t c = 0; c < 3; ++c) {
                                 const std::int64_t off = c * vox;
                                 dice_grad(ctx.input(0).raw() + off, ctx.input(1).raw() + off, vox,
                                           sums[static_cast<std::size_t>(c)], eps, -ctx.grad_output[0],
                                           ctx.needs(0) ? ctx.grad(0).raw() + off : nullptr,
                                           ctx.needs(1) ? ctx.grad(1).raw() + off : nullptr);
                               }
                             });
  g.set_scalar_f64(id, loss);
  return {g, id};
}

Var l2_recon_loss(Var recon, Var input, Reduction reduction) {
  Graph& g = same_graph({recon, input});
  check_same_shape(recon.value(), input.value(), "l2_recon_loss");
  const std::int64_t n = recon.value().numel();
  const std::vector<double> r = g.wide(recon.id()), x = g.wide(input.id());
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double d = x[i] - r[i];
    acc += d * d;
  }
  const double norm = reduction == Reduction::kMean ? static_cast<double>(n) : 1.0;
  const NodeId id = g.record("l2_recon_loss", {recon.id(), input.id()}, Tensor::scalar(static_cast<float>(acc / norm)),
                             [n, norm](const BackwardContext& ctx) {
                               const float* r = ctx.input(0).raw();
                               const float* x = ctx.input(1).raw();
                               const double k = 2.0 * ctx.grad_output[0] / norm;
                               for (std::int64_t i = 0; i < n; ++i) {
                                 const double d = static_cast<double>(x[i]) - r[i];
                                 if (ctx.needs(0)) ctx.grad(0)[i] += static_cast<float>(-k * d);
                                 if (ctx.needs(1)) ctx.grad(1)[i] += static_cast<float>(k * d);
                               }
                             });
  g.set_scalar_f64(id, acc / norm);
  return {g, id};
}

Var kl_loss(Var mu, Var logvar, double voxel_count) {
  if (!(voxel_count > 0.0)) throw std::invalid_argument("kl_loss: voxel count must be positive");
  Graph& g = same_graph({mu, logvar});
  check_same_shape(mu.value(), logvar.value(), "kl_loss");
  const std::int64_t n = mu.value().numel();
  const std::vector<double> wm = g.wide(mu.id()), wl = g.wide(logvar.id());
  double acc = 0.0;
  for (std::size_t i = 0; i < wm.size(); ++i) acc += wm[i] * wm[i] + std::exp(wl[i]) - wl[i] - 1.0;
  const NodeId id = g.record("kl_loss", {mu.id(), logvar.id()}, Tensor::scalar(static_cast<float>(acc / voxel_count)),
                             [n, voxel_count](const BackwardContext& ctx) {
                               const double k = ctx.grad_output[0] / voxel_count;
                               for (std::int64_t i = 0; i < n; ++i) {
                                 if (ctx.needs(0)) ctx.grad(0)[i] += static_cast<float>(k * 2.0 * ctx.input(0)[i]);
                                 if (ctx.needs(1))
                                   ctx.grad(1)[i] += static_cast<float>(k * (std::exp(double(ctx.input(1)[i])) - 1.0));
                               }
                             });
  g.set_scalar_f64(id, acc / voxel_count);
  return {g, id};
}

LossTerms total_loss(Var seg_probs, Var target, Var recon, Var input, Var mu, Var logvar, const LossWeights& weights,
                     double voxel_count) {
  weights.validate();
  LossTerms t;
  t.dice = dice_loss(seg_probs, target, weights.dice_eps);
  t.l2 = l2_recon_loss(recon, input, weights.l2_reduction);
  t.kl = kl_loss(mu, logvar, voxel_count);
  t.total = ops::linear_combination({t.dice, t.l2, t.kl}, {weights.w_dice, weights.w_l2, weights.w_kl});
  return t;
}

}  // namespace vaeseg
