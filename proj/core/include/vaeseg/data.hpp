#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vaeseg/rng.hpp"
#include "vaeseg/tensor.hpp"

namespace vaeseg {

using Extent3 = std::array<std::int64_t, 3>;

/// Four co-registered modalities (T1, T1c, T2, FLAIR) as [4, D, H, W].
struct Volume {
  Tensor image;

  Extent3 spatial() const { return {image.dim(1), image.dim(2), image.dim(3)}; }
  std::int64_t channels() const { return image.dim(0); }
  void validate() const;
};

/// Label codes: 0 background, 1 necrotic / non-enhancing core, 2 edema,
/// 4 enhancing tumor.
struct LabelVolume {
  Extent3 shape{1, 1, 1};
  std::vector<std::uint8_t> codes;

  std::int64_t voxels() const { return shape[0] * shape[1] * shape[2]; }
  void validate() const;
  bool operator==(const LabelVolume&) const = default;
};

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kNecrotic = 1;
inline constexpr std::uint8_t kEdema = 2;
inline constexpr std::uint8_t kEnhancing = 4;

bool is_valid_label_code(std::uint8_t code);

/// Binary [3, D, H, W] target ordered (WT, TC, ET).
Tensor labels_to_channels(const LabelVolume& labels);

/// True when ET <= TC <= WT voxelwise.
bool satisfies_nesting(const Tensor& channels);

/// Per-channel standardization with statistics from nonzero voxels only,
/// applied to every voxel. Channels with fewer than two nonzero voxels or
/// zero spread pass through unchanged and are reported in `degenerate`.
Volume normalize(const Volume& volume, std::vector<std::int64_t>* degenerate = nullptr);

struct AugmentParams {
  std::vector<double> scale;           // per channel, U(0.9, 1.1)
  std::vector<double> shift_fraction;  // per channel, U(-0.1, 0.1), times the channel std
  std::array<bool, 3> flip{false, false, false};
};

AugmentParams sample_augmentation(Rng& rng, std::int64_t channels);

/// x -> x * scale + shift_fraction * std_nonzero(channel), then axis mirrors
/// applied identically to image and target.
void apply_augmentation(Volume& volume, Tensor& target, const AugmentParams& params);

std::pair<Volume, Tensor> augment(Volume volume, Tensor target, Rng& rng);

/// Symmetric zero padding so that every axis reaches at least `shape`.
std::pair<Volume, Tensor> pad_to_at_least(const Volume& volume, const Tensor& target, const Extent3& shape);

std::pair<Volume, Tensor> crop_at(const Volume& volume, const Tensor& target, const Extent3& offset,
                                  const Extent3& shape);

/// Uniform random corner; pads first when the volume is smaller than the crop.
std::pair<Volume, Tensor> random_crop(const Volume& volume, const Tensor& target, const Extent3& crop_shape, Rng& rng);

enum class Difficulty { kLow, kMedium, kHigh };

Difficulty parse_difficulty(const std::string& text);
std::string to_string(Difficulty difficulty);

struct Phantom {
  Volume volume;
  LabelVolume labels;
};

/// Synthetic nested-tumor phantom of size^3 voxels: a brain ellipsoid
/// containing three nested ellipsoids (WT ⊇ TC ⊇ ET), tissue-class mean
/// intensities per modality, and Gaussian noise set by difficulty.
Phantom gen_phantom(std::uint64_t seed, std::int64_t size, Difficulty difficulty);

/// A normalized training case.
struct Sample {
  std::string name;
  Volume volume;
  Tensor target;
};

/// augment then crop, in that order.
std::pair<Volume, Tensor> prepare_training_sample(const Sample& sample, const Extent3& crop_shape, Rng& rng);

}  // namespace vaeseg
