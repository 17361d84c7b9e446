#pragma once

#include <span>

#include "vaeseg/data.hpp"
#include "vaeseg/model.hpp"

namespace vaeseg {

/// Segmentation probabilities [3, D, H, W] for a volume of any spatial size;
/// pads symmetrically with zeros to the network's multiple and crops back.
Tensor predict(const Model& model, const Volume& volume);

/// Mean over the 8 axis-mirror variants: flip input, predict, flip back.
Tensor tta_predict(const Model& model, const Volume& volume);

/// Mean of (tta_)predict over models with identical configurations.
Tensor ensemble_predict(std::span<const Model> models, const Volume& volume, bool use_tta);

/// Voxelwise mean of equally shaped maps. Each voxel's values are sorted
/// before an f64 sum, so the result does not depend on the order of `maps`.
Tensor average_maps(std::span<const Tensor> maps);

/// Gated decode: background unless WT > t; edema unless TC > t; necrotic
/// unless ET > t; otherwise enhancing.
LabelVolume channels_to_labels(const Tensor& probs, double threshold = 0.5);

}  // namespace vaeseg
