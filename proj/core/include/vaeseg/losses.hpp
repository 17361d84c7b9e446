#pragma once

#include <cstdint>

#include "vaeseg/autodiff.hpp"

namespace vaeseg {

enum class Reduction { kSum, kMean };

/// Weights of the composite objective
///   w_dice * dice_loss + w_l2 * l2_recon_loss + w_kl * kl_loss.
/// w_dice is 1 in normal training; zeroing it isolates the VAE terms.
struct LossWeights {
  double w_dice = 1.0;
  double w_l2 = 0.1;
  double w_kl = 0.1;
  double dice_eps = 1e-8;
  Reduction l2_reduction = Reduction::kMean;

  void validate() const;
};

/// Soft dice 2·Σ(t·p) / (Σt² + Σp² + eps) over all elements.
Var dice_coefficient(Var pred, Var truth, double eps);

/// Σ_c (1 − dice_c) over the three channels of a [3, D, H, W] map.
Var dice_loss(Var seg_probs, Var target, double eps);

/// Σ(input − recon)², divided by the element count for Reduction::kMean.
Var l2_recon_loss(Var recon, Var input, Reduction reduction);

/// (1/N) Σ_i (μ_i² + σ_i² − log σ_i² − 1) with σ² = exp(logvar).
Var kl_loss(Var mu, Var logvar, double voxel_count);

struct LossTerms {
  Var total;
  Var dice;
  Var l2;
  Var kl;
};

LossTerms total_loss(Var seg_probs, Var target, Var recon, Var input, Var mu, Var logvar, const LossWeights& weights,
                     double voxel_count);

}  // namespace vaeseg
