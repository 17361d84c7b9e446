#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vaeseg/data.hpp"

namespace vaeseg {

/// Binary voxel mask, row-major [D, H, W].
struct Mask {
  Extent3 shape{1, 1, 1};
  std::vector<std::uint8_t> bits;

  Mask() = default;
  explicit Mask(const Extent3& s) : shape(s), bits(static_cast<std::size_t>(s[0] * s[1] * s[2]), 0) {}

  std::int64_t voxels() const { return shape[0] * shape[1] * shape[2]; }
  std::int64_t count() const;
  std::uint8_t& at(std::int64_t d, std::int64_t h, std::int64_t w) {
    return bits[static_cast<std::size_t>((d * shape[1] + h) * shape[2] + w)];
  }
  std::uint8_t at(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return bits[static_cast<std::size_t>((d * shape[1] + h) * shape[2] + w)];
  }
};

/// Thresholded (> 0.5) channel of a [C, D, H, W] tensor.
Mask mask_from_channel(const Tensor& channels, std::int64_t channel);

enum class TumorClass { kET, kWT, kTC };

/// Report order: ET, WT, TC.
inline constexpr std::array<TumorClass, 3> kReportOrder{TumorClass::kET, TumorClass::kWT, TumorClass::kTC};

std::string to_string(TumorClass c);
Mask class_mask(const LabelVolume& labels, TumorClass c);

/// 2|P∩G| / (|P|+|G|); nullopt when both are empty.
std::optional<double> binary_dice(const Mask& pred, const Mask& gt);

struct SensSpec {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

SensSpec sensitivity_specificity(const Mask& pred, const Mask& gt);

/// Set voxels with an unset 6-neighbour or lying on the grid border.
Mask surface(const Mask& mask);

/// Squared Euclidean distance from every voxel to the nearest set voxel of
/// `sites` (exact, separable). Unreachable voxels hold +inf.
std::vector<double> squared_distance_transform(const Mask& sites);

/// Symmetric surface distance: for each direction, the nearest-rank
/// percentile of directed surface-to-surface distances; the larger of the two.
/// percentile must be 95 or 100. nullopt when either mask is empty.
std::optional<double> hausdorff(const Mask& pred, const Mask& gt, int percentile);

struct ClassMetrics {
  std::optional<double> dice;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> hausdorff_95;
  std::optional<double> hausdorff_max;
};

struct MetricsReport {
  std::array<ClassMetrics, 3> classes;  // in kReportOrder

  const ClassMetrics& operator[](TumorClass c) const;
};

MetricsReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt);

}  // namespace vaeseg
