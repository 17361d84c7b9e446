#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vaeseg/data.hpp"
#include "vaeseg/losses.hpp"
#include "vaeseg/model.hpp"
#include "vaeseg/optimizer.hpp"
#include "vaeseg/rng.hpp"

namespace vaeseg {

struct TrainOptions {
  LossWeights weights;
  double weight_decay = 1e-5;
  /// N in the KL term; 0 means the crop's spatial voxel count.
  double kl_voxels = 0.0;
};

struct LossValues {
  double total = 0.0;
  double dice = 0.0;
  double l2 = 0.0;
  double kl = 0.0;
};

struct StepResult {
  LossValues loss;
  std::map<std::string, Tensor> grads;
};

/// Forward (training mode) + composite loss + backward on one prepared crop.
StepResult compute_gradients(const Model& model, const Volume& crop, const Tensor& target, Rng& rng,
                             const TrainOptions& options);

struct EpochStats {
  std::int64_t epoch = 0;
  double lr = 0.0;
  std::int64_t steps = 0;
  LossValues mean;
};

/// One pass over the dataset in a seeded random order, one Adam step per
/// sample at the epoch's learning rate. All randomness for sample k of epoch
/// e derives from run_rng.split(e).split(k + 1); the order from split(e).split(0).
EpochStats train_epoch(Model& model, const std::vector<Sample>& dataset, const Rng& run_rng, AdamState& state,
                       const Schedule& schedule, std::int64_t epoch, const TrainOptions& options);

}  // namespace vaeseg
