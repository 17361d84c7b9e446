#include "vaeseg/trainer.hpp"

#include <numeric>
#include <stdexcept>

namespace vaeseg {

StepResult compute_gradients(const Model& model, const Volume& crop, const Tensor& target, Rng& rng,
                             const TrainOptions& options) {
  Graph g;
  BoundParameters params(g, model.params, true);
  Var x = make_leaf(g, crop.image, false);
  Var t = make_leaf(g, target, false);
  const ForwardOutputs out = forward(model.config, params, x, rng, true);
  const Extent3 sp = crop.spatial();
  const double n = options.kl_voxels > 0.0 ? options.kl_voxels : static_cast<double>(sp[0] * sp[1] * sp[2]);
  const LossTerms terms = total_loss(out.seg_probs, t, out.recon, x, out.mu, out.logvar, options.weights, n);

  StepResult r;
  r.loss = {g.scalar_f64(terms.total.id()), g.scalar_f64(terms.dice.id()), g.scalar_f64(terms.l2.id()),
            g.scalar_f64(terms.kl.id())};
  r.grads = params.named_gradients(g.backward(terms.total.id()));
  return r;
}

EpochStats train_epoch(Model& model, const std::vector<Sample>& dataset, const Rng& run_rng, AdamState& state,
                       const Schedule& schedule, std::int64_t epoch, const TrainOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  const Rng epoch_rng = run_rng.split(static_cast<std::uint64_t>(epoch));
  Rng order_rng = epoch_rng.split(0);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }

  EpochStats stats;
  stats.epoch = epoch;
  stats.lr = schedule.lr_at(epoch);
  const Extent3 crop = model.config.crop_shape;
  for (std::size_t k : order) {
    Rng sample_rng = epoch_rng.split(k + 1);
    auto [volume, target] = prepare_training_sample(dataset[k], crop, sample_rng);
    StepResult step = compute_gradients(model, volume, target, sample_rng, options);
    adam_step(model.params, step.grads, state, stats.lr, options.weight_decay);
    stats.mean.total += step.loss.total;
    stats.mean.dice += step.loss.dice;
    stats.mean.l2 += step.loss.l2;
    stats.mean.kl += step.loss.kl;
    ++stats.steps;
  }
  const auto n = static_cast<double>(stats.steps);
  stats.mean.total /= n;
  stats.mean.dice /= n;
  stats.mean.l2 /= n;
  stats.mean.kl /= n;
  return stats;
}

}  // namespace vaeseg
