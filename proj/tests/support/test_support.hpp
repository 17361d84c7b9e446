#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "vaeseg/data.hpp"
#include "vaeseg/metrics.hpp"
#include "vaeseg/ops.hpp"
#include "vaeseg/rng.hpp"
#include "vaeseg/tensor.hpp"

namespace vaeseg::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline Tensor rademacher(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.bernoulli(0.5) ? 1.0f : -1.0f;
  return t;
}

inline Tensor random_binary(const Shape& shape, Rng& rng, double p = 0.5) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.bernoulli(p) ? 1.0f : 0.0f;
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

/// Direct seven-loop cross-correlation in double.
inline Tensor naive_conv3d(const Tensor& x, const Tensor& w, const Tensor* b, std::int64_t stride) {
  const std::int64_t ci = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t co = w.dim(0), k = w.dim(2), pad = k / 2;
  const std::int64_t od = (d + 2 * pad - k) / stride + 1, oh = (h + 2 * pad - k) / stride + 1,
                     ow = (wd + 2 * pad - k) / stride + 1;
  Tensor y({co, od, oh, ow});
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t z = 0; z < od; ++z)
      for (std::int64_t r = 0; r < oh; ++r)
        for (std::int64_t c = 0; c < ow; ++c) {
          double acc = b ? (*b)[o] : 0.0;
          for (std::int64_t i = 0; i < ci; ++i)
            for (std::int64_t a = 0; a < k; ++a)
              for (std::int64_t bb = 0; bb < k; ++bb)
                for (std::int64_t cc = 0; cc < k; ++cc) {
                  const std::int64_t sz = z * stride + a - pad, sr = r * stride + bb - pad, sc = c * stride + cc - pad;
                  if (sz < 0 || sr < 0 || sc < 0 || sz >= d || sr >= h || sc >= wd) continue;
                  acc += static_cast<double>(x[((i * d + sz) * h + sr) * wd + sc]) *
                         w[(((o * ci + i) * k + a) * k + bb) * k + cc];
                }
          y[((o * od + z) * oh + r) * ow + c] = static_cast<float>(acc);
        }
  return y;
}

/// Half-pixel linear interpolation evaluated per output voxel from the formula.
inline Tensor naive_upsample(const Tensor& x) {
  const std::int64_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto taps = [](std::int64_t t, std::int64_t n, std::int64_t& i0, std::int64_t& i1, double& f) {
    double s = (t + 0.5) / 2.0 - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::int64_t>(std::floor(s));
    i1 = std::min(i0 + 1, n - 1);
    f = s - static_cast<double>(i0);
  };
  Tensor y({c, 2 * d, 2 * h, 2 * w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t a = 0; a < 2 * d; ++a)
      for (std::int64_t b = 0; b < 2 * h; ++b)
        for (std::int64_t e = 0; e < 2 * w; ++e) {
          std::int64_t d0, d1, h0, h1, w0, w1;
          double fd, fh, fw;
          taps(a, d, d0, d1, fd);
          taps(b, h, h0, h1, fh);
          taps(e, w, w0, w1, fw);
          double acc = 0.0;
          for (int p = 0; p < 2; ++p)
            for (int q = 0; q < 2; ++q)
              for (int r = 0; r < 2; ++r) {
                const double wt = (p ? fd : 1 - fd) * (q ? fh : 1 - fh) * (r ? fw : 1 - fw);
                const std::int64_t id = p ? d1 : d0, ih = q ? h1 : h0, iw = r ? w1 : w0;
                acc += wt * x[((ch * d + id) * h + ih) * w + iw];
              }
          y[((ch * 2 * d + a) * 2 * h + b) * 2 * w + e] = static_cast<float>(acc);
        }
  return y;
}

/// All-pairs Hausdorff over 6-connectivity surfaces with nearest-rank percentile.
inline double brute_hausdorff(const Mask& a, const Mask& b, int percentile) {
  auto surf = [](const Mask& m) {
    std::vector<std::array<std::int64_t, 3>> pts;
    const auto [nd, nh, nw] = m.shape;
    auto on = [&](std::int64_t d, std::int64_t h, std::int64_t w) {
      return d >= 0 && h >= 0 && w >= 0 && d < nd && h < nh && w < nw && m.at(d, h, w);
    };
    for (std::int64_t d = 0; d < nd; ++d)
      for (std::int64_t h = 0; h < nh; ++h)
        for (std::int64_t w = 0; w < nw; ++w) {
          if (!m.at(d, h, w)) continue;
          const bool border = d == 0 || h == 0 || w == 0 || d == nd - 1 || h == nh - 1 || w == nw - 1;
          if (border || !on(d - 1, h, w) || !on(d + 1, h, w) || !on(d, h - 1, w) || !on(d, h + 1, w) ||
              !on(d, h, w - 1) || !on(d, h, w + 1))
            pts.push_back({d, h, w});
        }
    return pts;
  };
  auto directed = [&](const auto& from, const auto& to) {
    std::vector<double> ds;
    for (const auto& p : from) {
      std::int64_t best = -1;
      for (const auto& q : to) {
        const std::int64_t dd = p[0] - q[0], dh = p[1] - q[1], dw = p[2] - q[2];
        const std::int64_t s = dd * dd + dh * dh + dw * dw;
        if (best < 0 || s < best) best = s;
      }
      ds.push_back(std::sqrt(static_cast<double>(best)));
    }
    std::sort(ds.begin(), ds.end());
    auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(ds.size())));
    rank = std::clamp<std::size_t>(rank, 1, ds.size());
    return ds[rank - 1];
  };
  const auto sa = surf(a), sb = surf(b);
  return std::max(directed(sa, sb), directed(sb, sa));
}

inline Mask random_blob_mask(const Extent3& shape, Rng& rng) {
  Mask m(shape);
  const int kind = static_cast<int>(rng.uniform_int(0, 2));
  if (kind == 0) {
    const double p = rng.uniform(0.05, 0.6);
    for (auto& b : m.bits) b = rng.bernoulli(p) ? 1 : 0;
  } else {
    const double cd = rng.uniform(0, shape[0]), ch = rng.uniform(0, shape[1]), cw = rng.uniform(0, shape[2]);
    const double r = rng.uniform(1.0, 0.6 * static_cast<double>(std::max({shape[0], shape[1], shape[2]})));
    for (std::int64_t d = 0; d < shape[0]; ++d)
      for (std::int64_t h = 0; h < shape[1]; ++h)
        for (std::int64_t w = 0; w < shape[2]; ++w) {
          const double e = kind == 1 ? (d - cd) * (d - cd) + (h - ch) * (h - ch) + (w - cw) * (w - cw)
                                     : std::max({std::abs(d - cd), std::abs(h - ch), std::abs(w - cw)}) * r;
          m.at(d, h, w) = e <= r * r ? 1 : 0;
        }
  }
  if (m.count() == 0) m.at(rng.uniform_int(0, shape[0] - 1), rng.uniform_int(0, shape[1] - 1), rng.uniform_int(0, shape[2] - 1)) = 1;
  return m;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("vaeseg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace vaeseg::testing
