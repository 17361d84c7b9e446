#include "vaeseg/inference.hpp"

#include <algorithm>
#include <stdexcept>

#include "vaeseg/ops.hpp"

namespace vaeseg {

namespace {

std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

Tensor crop_probs(const Tensor& probs, const Extent3& offset, const Extent3& shape) {
  const std::int64_t c = probs.dim(0);
  const std::int64_t sd = probs.dim(1), sh = probs.dim(2), sw = probs.dim(3);
  Tensor out({c, shape[0], shape[1], shape[2]});
  std::int64_t o = 0;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t d = 0; d < shape[0]; ++d)
      for (std::int64_t h = 0; h < shape[1]; ++h) {
        const std::int64_t base = ((ch * sd + d + offset[0]) * sh + h + offset[1]) * sw + offset[2];
        for (std::int64_t w = 0; w < shape[2]; ++w) out[o++] = probs[base + w];
      }
  return out;
}

}  // namespace

Tensor predict(const Model& model, const Volume& volume) {
  volume.validate();
  const std::int64_t m = model.config.downsample_factor();
  const Extent3 sp = volume.spatial();
  const Extent3 padded{round_up(sp[0], m), round_up(sp[1], m), round_up(sp[2], m)};
  if (padded == sp) return predict_probabilities(model, volume.image);

  const Tensor dummy = Tensor::zeros({3, sp[0], sp[1], sp[2]});
  auto [pv, unused] = pad_to_at_least(volume, dummy, padded);
  const Tensor probs = predict_probabilities(model, pv.image);
  const Extent3 offset{(padded[0] - sp[0]) / 2, (padded[1] - sp[1]) / 2, (padded[2] - sp[2]) / 2};
  return crop_probs(probs, offset, sp);
}

Tensor tta_predict(const Model& model, const Volume& volume) {
  std::vector<Tensor> maps;
  maps.reserve(8);
  for (int s = 0; s < 8; ++s) {
    const bool fd = (s & 1) != 0, fh = (s & 2) != 0, fw = (s & 4) != 0;
    const Volume flipped{kernels::flip_spatial(volume.image, fd, fh, fw)};
    maps.push_back(kernels::flip_spatial(predict(model, flipped), fd, fh, fw));
  }
  return average_maps(maps);
}

Tensor ensemble_predict(std::span<const Model> models, const Volume& volume, bool use_tta) {
  if (models.empty()) throw std::invalid_argument("ensemble_predict: no models");
  for (const Model& m : models.subspan(1)) {
    if (!(m.config == models[0].config)) throw ConfigError("ensemble members have different configurations");
  }
  std::vector<Tensor> maps;
  maps.reserve(models.size());
  for (const Model& m : models) maps.push_back(use_tta ? tta_predict(m, volume) : predict(m, volume));
  if (maps.size() == 1) return std::move(maps.front());
  return average_maps(maps);
}

Tensor average_maps(std::span<const Tensor> maps) {
  if (maps.empty()) throw std::invalid_argument("average_maps: nothing to average");
  for (const Tensor& t : maps) check_same_shape(maps[0], t, "average_maps");
  const std::size_t k = maps.size();
  Tensor out(maps[0].shape());
  std::vector<float> vals(k);
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) vals[j] = maps[j][i];
    std::sort(vals.begin(), vals.end());
    double acc = 0.0;
    for (float v : vals) acc += v;
    out[i] = static_cast<float>(acc / static_cast<double>(k));
  }
  return out;
}

LabelVolume channels_to_labels(const Tensor& probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must lie in (0, 1)");
  if (probs.rank() != 4 || probs.dim(0) != 3) {
    throw ShapeError("channels_to_labels expects [3,D,H,W], got " + shape_to_string(probs.shape()));
  }
  LabelVolume out;
  out.shape = {probs.dim(1), probs.dim(2), probs.dim(3)};
  const std::int64_t n = out.voxels();
  out.codes.assign(static_cast<std::size_t>(n), kBackground);
  for (std::int64_t i = 0; i < n; ++i) {
    std::uint8_t code = kBackground;
    if (probs[i] > threshold) {
      code = kEdema;
      if (probs[n + i] > threshold) code = probs[2 * n + i] > threshold ? kEnhancing : kNecrotic;
    }
    out.codes[static_cast<std::size_t>(i)] = code;
  }
  return out;
}

}  // namespace vaeseg
