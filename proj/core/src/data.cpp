#include "vaeseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vaeseg/ops.hpp"

namespace vaeseg {

namespace {

struct ChannelStats {
  std::int64_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

ChannelStats nonzero_stats(const float* x, std::int64_t n) {
  ChannelStats s;
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (x[i] != 0.0f) {
      ++s.count;
      sum += x[i];
    }
  }
  if (s.count == 0) return s;
  s.mean = sum / static_cast<double>(s.count);
  double var = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (x[i] != 0.0f) {
      const double d = x[i] - s.mean;
      var += d * d;
    }
  }
  s.stddev = std::sqrt(var / static_cast<double>(s.count));
  return s;
}

Shape with_spatial(std::int64_t c, const Extent3& e) { return {c, e[0], e[1], e[2]}; }

// Copies the window [offset, offset + shape) of a [C, D, H, W] tensor; parts
// of the window outside the source read as zero.
Tensor window(const Tensor& src, const std::array<std::int64_t, 3>& offset, const Extent3& shape) {
  const std::int64_t c = src.dim(0), d = src.dim(1), h = src.dim(2), w = src.dim(3);
  Tensor out(with_spatial(c, shape));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t z = 0; z < shape[0]; ++z) {
      const std::int64_t sz = z + offset[0];
      if (sz < 0 || sz >= d) continue;
      for (std::int64_t y = 0; y < shape[1]; ++y) {
        const std::int64_t sy = y + offset[1];
        if (sy < 0 || sy >= h) continue;
        const float* row = src.raw() + ((ch * d + sz) * h + sy) * w;
        float* dst = out.raw() + ((ch * shape[0] + z) * shape[1] + y) * shape[2];
        for (std::int64_t x = 0; x < shape[2]; ++x) {
          const std::int64_t sx = x + offset[2];
          if (sx >= 0 && sx < w) dst[x] = row[sx];
        }
      }
    }
  }
  return out;
}

void check_pair(const Volume& volume, const Tensor& target) {
  volume.validate();
  if (target.rank() != 4 || target.dim(0) != 3 || target.dim(1) != volume.image.dim(1) ||
      target.dim(2) != volume.image.dim(2) || target.dim(3) != volume.image.dim(3)) {
    throw ShapeError("target " + shape_to_string(target.shape()) + " does not pair with image " +
                     shape_to_string(volume.image.shape()));
  }
}

}  // namespace

void Volume::validate() const {
  if (image.rank() != 4 || image.dim(0) != 4) {
    throw ShapeError("volume image must be [4,D,H,W], got " + shape_to_string(image.shape()));
  }
}

bool is_valid_label_code(std::uint8_t code) {
  return code == kBackground || code == kNecrotic || code == kEdema || code == kEnhancing;
}

void LabelVolume::validate() const {
  for (auto e : shape)
    if (e < 1) throw ShapeError("label volume extents must be positive");
  if (static_cast<std::int64_t>(codes.size()) != voxels()) throw ShapeError("label volume size mismatch");
  for (auto code : codes)
    if (!is_valid_label_code(code)) throw std::invalid_argument("unknown label code " + std::to_string(code));
}

Tensor labels_to_channels(const LabelVolume& labels) {
  labels.validate();
  const std::int64_t n = labels.voxels();
  Tensor out(with_spatial(3, labels.shape));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto code = labels.codes[static_cast<std::size_t>(i)];
    out[i] = code != kBackground ? 1.0f : 0.0f;
    out[n + i] = (code == kNecrotic || code == kEnhancing) ? 1.0f : 0.0f;
    out[2 * n + i] = code == kEnhancing ? 1.0f : 0.0f;
  }
  return out;
}

bool satisfies_nesting(const Tensor& channels) {
  if (channels.rank() != 4 || channels.dim(0) != 3) return false;
  const std::int64_t n = channels.numel() / 3;
  for (std::int64_t i = 0; i < n; ++i) {
    if (channels[2 * n + i] > channels[n + i] || channels[n + i] > channels[i]) return false;
  }
  return true;
}

Volume normalize(const Volume& volume, std::vector<std::int64_t>* degenerate) {
  volume.validate();
  Volume out = volume;
  const std::int64_t vox = volume.image.numel() / volume.channels();
  for (std::int64_t c = 0; c < volume.channels(); ++c) {
    float* x = out.image.raw() + c * vox;
    const ChannelStats s = nonzero_stats(x, vox);
    if (s.count < 2 || !(s.stddev > 0.0)) {
      if (degenerate) degenerate->push_back(c);
      continue;
    }
    for (std::int64_t i = 0; i < vox; ++i) x[i] = static_cast<float>((x[i] - s.mean) / s.stddev);
  }
  return out;
}

AugmentParams sample_augmentation(Rng& rng, std::int64_t channels) {
  AugmentParams p;
  for (std::int64_t c = 0; c < channels; ++c) {
    p.scale.push_back(rng.uniform(0.9, 1.1));
    p.shift_fraction.push_back(rng.uniform(-0.1, 0.1));
  }
  for (auto& f : p.flip) f = rng.bernoulli(0.5);
  return p;
}

void apply_augmentation(Volume& volume, Tensor& target, const AugmentParams& params) {
  check_pair(volume, target);
  const std::int64_t channels = volume.channels();
  if (static_cast<std::int64_t>(params.scale.size()) != channels ||
      static_cast<std::int64_t>(params.shift_fraction.size()) != channels) {
    throw std::invalid_argument("augmentation parameters do not match channel count");
  }
  const std::int64_t vox = volume.image.numel() / channels;
  for (std::int64_t c = 0; c < channels; ++c) {
    float* x = volume.image.raw() + c * vox;
    const double sigma = nonzero_stats(x, vox).stddev;
    const double scale = params.scale[static_cast<std::size_t>(c)];
    const double shift = params.shift_fraction[static_cast<std::size_t>(c)] * sigma;
    if (scale == 1.0 && shift == 0.0) continue;
    for (std::int64_t i = 0; i < vox; ++i) x[i] = static_cast<float>(x[i] * scale + shift);
  }
  const auto [fd, fh, fw] = params.flip;
  if (fd || fh || fw) {
    volume.image = kernels::flip_spatial(volume.image, fd, fh, fw);
    target = kernels::flip_spatial(target, fd, fh, fw);
  }
}

std::pair<Volume, Tensor> augment(Volume volume, Tensor target, Rng& rng) {
  const AugmentParams params = sample_augmentation(rng, volume.channels());
  apply_augmentation(volume, target, params);
  return {std::move(volume), std::move(target)};
}

std::pair<Volume, Tensor> pad_to_at_least(const Volume& volume, const Tensor& target, const Extent3& shape) {
  check_pair(volume, target);
  const Extent3 have = volume.spatial();
  Extent3 padded = have;
  std::array<std::int64_t, 3> offset{0, 0, 0};
  bool needed = false;
  for (std::size_t a = 0; a < 3; ++a) {
    if (have[a] < shape[a]) {
      padded[a] = shape[a];
      offset[a] = -((shape[a] - have[a]) / 2);
      needed = true;
    }
  }
  if (!needed) return {volume, target};
  return {Volume{window(volume.image, offset, padded)}, window(target, offset, padded)};
}

std::pair<Volume, Tensor> crop_at(const Volume& volume, const Tensor& target, const Extent3& offset,
                                  const Extent3& shape) {
  check_pair(volume, target);
  const Extent3 have = volume.spatial();
  for (std::size_t a = 0; a < 3; ++a) {
    if (shape[a] < 1 || offset[a] < 0 || offset[a] + shape[a] > have[a]) {
      throw ShapeError("crop window out of bounds on axis " + std::to_string(a));
    }
  }
  return {Volume{window(volume.image, offset, shape)}, window(target, offset, shape)};
}

std::pair<Volume, Tensor> random_crop(const Volume& volume, const Tensor& target, const Extent3& crop_shape, Rng& rng) {
  auto [padded, padded_target] = pad_to_at_least(volume, target, crop_shape);
  const Extent3 have = padded.spatial();
  Extent3 offset{};
  for (std::size_t a = 0; a < 3; ++a) offset[a] = rng.uniform_int(0, have[a] - crop_shape[a]);
  return crop_at(padded, padded_target, offset, crop_shape);
}

std::pair<Volume, Tensor> prepare_training_sample(const Sample& sample, const Extent3& crop_shape, Rng& rng) {
  auto [volume, target] = augment(sample.volume, sample.target, rng);
  return random_crop(volume, target, crop_shape, rng);
}

Difficulty parse_difficulty(const std::string& text) {
  if (text == "low") return Difficulty::kLow;
  if (text == "medium") return Difficulty::kMedium;
  if (text == "high") return Difficulty::kHigh;
  throw std::invalid_argument("unknown difficulty '" + text + "' (expected low, medium or high)");
}

std::string to_string(Difficulty difficulty) {
  switch (difficulty) {
    case Difficulty::kLow: return "low";
    case Difficulty::kMedium: return "medium";
    case Difficulty::kHigh: return "high";
  }
  return "unknown";
}

Phantom gen_phantom(std::uint64_t seed, std::int64_t size, Difficulty difficulty) {
  if (size < 16 || size % 8 != 0) {
    throw std::invalid_argument("phantom size must be a multiple of 8 and >= 16, got " + std::to_string(size));
  }
  Rng rng(seed);
  const double s = static_cast<double>(size);

  struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> radii;
    bool contains(double z, double y, double x) const {
      const double dz = (z - center[0]) / radii[0];
      const double dy = (y - center[1]) / radii[1];
      const double dx = (x - center[2]) / radii[2];
      return dz * dz + dy * dy + dx * dx <= 1.0;
    }
  };

  Ellipsoid brain{};
  for (std::size_t a = 0; a < 3; ++a) {
    brain.center[a] = (s - 1.0) / 2.0 + rng.uniform(-0.03, 0.03) * s;
    brain.radii[a] = rng.uniform(0.36, 0.44) * s;
  }
  Ellipsoid wt{};
  for (std::size_t a = 0; a < 3; ++a) {
    wt.radii[a] = rng.uniform(0.16, 0.26) * s;
    const double slack = std::max(0.0, brain.radii[a] - wt.radii[a]) * 0.6;
    wt.center[a] = brain.center[a] + rng.uniform(-slack, slack);
  }
  auto nested = [&](const Ellipsoid& outer, double lo, double hi) {
    Ellipsoid e{};
    for (std::size_t a = 0; a < 3; ++a) {
      e.radii[a] = outer.radii[a] * rng.uniform(lo, hi);
      const double slack = (outer.radii[a] - e.radii[a]) * 0.5;
      e.center[a] = outer.center[a] + rng.uniform(-slack, slack);
    }
    return e;
  };
  const Ellipsoid tc = nested(wt, 0.6, 0.8);
  const Ellipsoid et = nested(tc, 0.55, 0.75);

  // Mean intensity per tissue class (healthy, edema, necrotic, enhancing)
  // for the modalities T1, T1c, T2, FLAIR.
  constexpr double kMeans[4][4] = {
      {0.55, 0.50, 0.45, 0.45},
      {0.45, 0.50, 0.85, 0.95},
      {0.25, 0.30, 0.90, 0.40},
      {0.45, 0.95, 0.60, 0.70},
  };
  std::array<double, 4> gain{};
  for (auto& g : gain) g = rng.uniform(0.9, 1.1);
  const double noise = difficulty == Difficulty::kLow ? 0.02 : difficulty == Difficulty::kMedium ? 0.06 : 0.12;

  Phantom p;
  p.labels.shape = {size, size, size};
  p.labels.codes.assign(static_cast<std::size_t>(size * size * size), kBackground);
  p.volume.image = Tensor(Shape{4, size, size, size});
  const std::int64_t vox = size * size * size;
  std::int64_t i = 0;
  for (std::int64_t z = 0; z < size; ++z) {
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x, ++i) {
        const double fz = static_cast<double>(z), fy = static_cast<double>(y), fx = static_cast<double>(x);
        if (!brain.contains(fz, fy, fx)) continue;
        int tissue = 0;
        std::uint8_t code = kBackground;
        if (wt.contains(fz, fy, fx)) {
          tissue = 1;
          code = kEdema;
          if (tc.contains(fz, fy, fx)) {
            tissue = 2;
            code = kNecrotic;
            if (et.contains(fz, fy, fx)) {
              tissue = 3;
              code = kEnhancing;
            }
          }
        }
        p.labels.codes[static_cast<std::size_t>(i)] = code;
        for (std::int64_t c = 0; c < 4; ++c) {
          const double v = gain[static_cast<std::size_t>(c)] * kMeans[tissue][c] + rng.normal(0.0, noise);
          p.volume.image[c * vox + i] = static_cast<float>(std::max(v, 0.01));
        }
      }
    }
  }
  return p;
}

}  // namespace vaeseg
