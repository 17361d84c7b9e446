#include "vaeseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace vaeseg {

namespace {

void check_masks(const Mask& a, const Mask& b) {
  if (a.shape != b.shape) throw ShapeError("mask shapes differ");
  if (static_cast<std::int64_t>(a.bits.size()) != a.voxels() || static_cast<std::int64_t>(b.bits.size()) != b.voxels()) {
    throw ShapeError("mask storage does not match its shape");
  }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas over the finite entries of f (stride-addressed).
void edt_1d(double* f, std::int64_t n, std::int64_t stride, std::vector<double>& fv, std::vector<std::int64_t>& v,
            std::vector<double>& z, std::vector<double>& out) {
  fv.resize(static_cast<std::size_t>(n));
  out.resize(static_cast<std::size_t>(n));
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  for (std::int64_t i = 0; i < n; ++i) fv[i] = f[i * stride];

  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (fv[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const std::int64_t p = v[k];
      s = ((fv[q] + static_cast<double>(q * q)) - (fv[p] + static_cast<double>(p * p))) / static_cast<double>(2 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) return;

  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double d = static_cast<double>(q - v[j]);
    out[q] = d * d + fv[v[j]];
  }
  for (std::int64_t i = 0; i < n; ++i) f[i * stride] = out[i];
}

std::vector<double> directed(const Mask& from_surface, const std::vector<double>& to_edt) {
  std::vector<double> d;
  for (std::size_t i = 0; i < from_surface.bits.size(); ++i)
    if (from_surface.bits[i]) d.push_back(std::sqrt(to_edt[i]));
  return d;
}

double nearest_rank(std::vector<double> values, int percentile) {
  std::sort(values.begin(), values.end());
  const auto n = static_cast<std::int64_t>(values.size());
  auto rank = static_cast<std::int64_t>(std::ceil(percentile / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::int64_t>(rank, 1, n);
  return values[static_cast<std::size_t>(rank - 1)];
}

}  // namespace

std::int64_t Mask::count() const {
  return std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
}

Mask mask_from_channel(const Tensor& channels, std::int64_t channel) {
  if (channels.rank() != 4 || channel < 0 || channel >= channels.dim(0)) {
    throw ShapeError("mask_from_channel: bad channel for " + shape_to_string(channels.shape()));
  }
  Mask m({channels.dim(1), channels.dim(2), channels.dim(3)});
  const std::int64_t n = m.voxels();
  for (std::int64_t i = 0; i < n; ++i) m.bits[static_cast<std::size_t>(i)] = channels[channel * n + i] > 0.5f ? 1 : 0;
  return m;
}

std::string to_string(TumorClass c) {
  switch (c) {
    case TumorClass::kET: return "ET";
    case TumorClass::kWT: return "WT";
    case TumorClass::kTC: return "TC";
  }
  return "?";
}

Mask class_mask(const LabelVolume& labels, TumorClass c) {
  labels.validate();
  Mask m(labels.shape);
  for (std::size_t i = 0; i < labels.codes.size(); ++i) {
    const std::uint8_t code = labels.codes[i];
    bool on = false;
    switch (c) {
      case TumorClass::kWT: on = code != kBackground; break;
      case TumorClass::kTC: on = code == kNecrotic || code == kEnhancing; break;
      case TumorClass::kET: on = code == kEnhancing; break;
    }
    m.bits[i] = on ? 1 : 0;
  }
  return m;
}

std::optional<double> binary_dice(const Mask& pred, const Mask& gt) {
  check_masks(pred, gt);
  std::int64_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

SensSpec sensitivity_specificity(const Mask& pred, const Mask& gt) {
  check_masks(pred, gt);
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
    tp += a && b;
    fp += a && !b;
    tn += !a && !b;
    fn += !a && b;
  }
  SensSpec r;
  if (tp + fn > 0) r.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tn + fp > 0) r.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return r;
}

Mask surface(const Mask& mask) {
  Mask s(mask.shape);
  const auto [nd, nh, nw] = mask.shape;
  for (std::int64_t d = 0; d < nd; ++d)
    for (std::int64_t h = 0; h < nh; ++h)
      for (std::int64_t w = 0; w < nw; ++w) {
        if (!mask.at(d, h, w)) continue;
        const bool border = d == 0 || h == 0 || w == 0 || d == nd - 1 || h == nh - 1 || w == nw - 1;
        const bool edge = border || !mask.at(d - 1, h, w) || !mask.at(d + 1, h, w) || !mask.at(d, h - 1, w) ||
                          !mask.at(d, h + 1, w) || !mask.at(d, h, w - 1) || !mask.at(d, h, w + 1);
        s.at(d, h, w) = edge ? 1 : 0;
      }
  return s;
}

std::vector<double> squared_distance_transform(const Mask& sites) {
  const auto [nd, nh, nw] = sites.shape;
  std::vector<double> f(sites.bits.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = sites.bits[i] ? 0.0 : kInf;
  std::vector<double> fv, z, out;
  std::vector<std::int64_t> v;
  for (std::int64_t d = 0; d < nd; ++d)
    for (std::int64_t h = 0; h < nh; ++h) edt_1d(f.data() + (d * nh + h) * nw, nw, 1, fv, v, z, out);
  for (std::int64_t d = 0; d < nd; ++d)
    for (std::int64_t w = 0; w < nw; ++w) edt_1d(f.data() + d * nh * nw + w, nh, nw, fv, v, z, out);
  for (std::int64_t h = 0; h < nh; ++h)
    for (std::int64_t w = 0; w < nw; ++w) edt_1d(f.data() + h * nw + w, nd, nh * nw, fv, v, z, out);
  return f;
}

std::optional<double> hausdorff(const Mask& pred, const Mask& gt, int percentile) {
  check_masks(pred, gt);
  if (percentile != 95 && percentile != 100) throw std::invalid_argument("percentile must be 95 or 100");
  if (pred.count() == 0 || gt.count() == 0) return std::nullopt;
  const Mask sp = surface(pred);
  const Mask sg = surface(gt);
  const double a = nearest_rank(directed(sp, squared_distance_transform(sg)), percentile);
  const double b = nearest_rank(directed(sg, squared_distance_transform(sp)), percentile);
  return std::max(a, b);
}

const ClassMetrics& MetricsReport::operator[](TumorClass c) const {
  for (std::size_t i = 0; i < kReportOrder.size(); ++i)
    if (kReportOrder[i] == c) return classes[i];
  throw std::out_of_range("unknown class");
}

MetricsReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt) {
  if (pred.shape != gt.shape) throw ShapeError("prediction and ground truth shapes differ");
  MetricsReport r;
  for (std::size_t i = 0; i < kReportOrder.size(); ++i) {
    const Mask p = class_mask(pred, kReportOrder[i]);
    const Mask g = class_mask(gt, kReportOrder[i]);
    ClassMetrics& m = r.classes[i];
    m.dice = binary_dice(p, g);
    const SensSpec ss = sensitivity_specificity(p, g);
    m.sensitivity = ss.sensitivity;
    m.specificity = ss.specificity;
    m.hausdorff_95 = hausdorff(p, g, 95);
    m.hausdorff_max = hausdorff(p, g, 100);
  }
  return r;
}

}  // namespace vaeseg
