// 3D convolution kernels: depth-slab im2col followed by a single GEMM per slab.
//
// Layout notes. A [C, D, H, W] row-major tensor is, read column-major, a
// (D*H*W) x C matrix, so activations map onto Eigen without copies. The
// weight [Cout, Cin*k^3] read column-major is the (Cin*k^3) x Cout matrix
// W^T. The im2col buffer for a slab of output voxels is Vslab x K
// column-major, K = Cin*k^3, so every column is a shifted copy of one
// input channel.

#include <Eigen/Core>

#include <algorithm>
#include <cstring>

#include "vaeseg/ops.hpp"

namespace vaeseg::kernels {

namespace {

using ColMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using Strided = Eigen::OuterStride<>;

constexpr std::int64_t kSlabBytes = 2 << 20;

struct Geometry {
  std::int64_t cin, cout, k, s, p;
  std::int64_t id, ih, iw;
  std::int64_t od, oh, ow;
  std::int64_t in_plane() const { return ih * iw; }
  std::int64_t in_vox() const { return id * ih * iw; }
  std::int64_t out_plane() const { return oh * ow; }
  std::int64_t out_vox() const { return od * oh * ow; }
  std::int64_t taps() const { return k * k * k; }
  std::int64_t cols() const { return cin * taps(); }
  bool pointwise() const { return k == 1 && s == 1; }

  std::int64_t slab_depth() const {
    const std::int64_t bytes_per_slice = out_plane() * cols() * static_cast<std::int64_t>(sizeof(float));
    return std::clamp<std::int64_t>(kSlabBytes / std::max<std::int64_t>(bytes_per_slice, 1), 1, od);
  }
};

Geometry make_geometry(const Shape& in_shape, const ConvSpec& spec) {
  spec.validate();
  if (in_shape.size() != 4 || in_shape[0] != spec.in_channels) {
    throw ShapeError("conv3d: input " + shape_to_string(in_shape) + " does not have " +
                     std::to_string(spec.in_channels) + " channels");
  }
  Geometry g{};
  g.cin = spec.in_channels;
  g.cout = spec.out_channels;
  g.k = spec.kernel;
  g.s = spec.stride;
  g.p = spec.padding();
  g.id = in_shape[1];
  g.ih = in_shape[2];
  g.iw = in_shape[3];
  g.od = spec.output_extent(g.id);
  g.oh = spec.output_extent(g.ih);
  g.ow = spec.output_extent(g.iw);
  return g;
}

// Output range [lo, hi) along one axis for which o*s + tap - p lies inside [0, n).
inline void valid_range(std::int64_t n_in, std::int64_t n_out, std::int64_t s, std::int64_t tap, std::int64_t p,
                        std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t shift = tap - p;
  lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
  hi = (n_in - 1 - shift) < 0 ? 0 : (n_in - 1 - shift) / s + 1;
  hi = std::min(hi, n_out);
  lo = std::min(lo, hi);
}

// Fill the im2col buffer for output depth slices [d0, d1).
void im2col(const Geometry& g, const float* in, std::int64_t d0, std::int64_t d1, float* col) {
  const std::int64_t rows = (d1 - d0) * g.out_plane();
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    const float* chan = in + ci * g.in_vox();
    for (std::int64_t kd = 0; kd < g.k; ++kd) {
      for (std::int64_t kh = 0; kh < g.k; ++kh) {
        std::int64_t h_lo, h_hi;
        valid_range(g.ih, g.oh, g.s, kh, g.p, h_lo, h_hi);
        for (std::int64_t kw = 0; kw < g.k; ++kw) {
          std::int64_t w_lo, w_hi;
          valid_range(g.iw, g.ow, g.s, kw, g.p, w_lo, w_hi);
          const std::int64_t column = (ci * g.k + kd) * g.k * g.k + kh * g.k + kw;
          float* dst = col + column * rows;
          for (std::int64_t od = d0; od < d1; ++od) {
            float* plane = dst + (od - d0) * g.out_plane();
            const std::int64_t idz = od * g.s + kd - g.p;
            if (idz < 0 || idz >= g.id) {
              std::fill(plane, plane + g.out_plane(), 0.0f);
              continue;
            }
            std::fill(plane, plane + h_lo * g.ow, 0.0f);
            for (std::int64_t oh = h_lo; oh < h_hi; ++oh) {
              float* row = plane + oh * g.ow;
              const float* src = chan + idz * g.in_plane() + (oh * g.s + kh - g.p) * g.iw;
              std::fill(row, row + w_lo, 0.0f);
              if (g.s == 1) {
                std::memcpy(row + w_lo, src + w_lo + kw - g.p, static_cast<std::size_t>(w_hi - w_lo) * sizeof(float));
              } else {
                for (std::int64_t ow = w_lo; ow < w_hi; ++ow) row[ow] = src[ow * g.s + kw - g.p];
              }
              std::fill(row + w_hi, row + g.ow, 0.0f);
            }
            std::fill(plane + h_hi * g.ow, plane + g.out_plane(), 0.0f);
          }
        }
      }
    }
  }
}

// Scatter-add an im2col-shaped gradient back onto the input gradient.
void col2im(const Geometry& g, const float* col, std::int64_t d0, std::int64_t d1, float* grad_in) {
  const std::int64_t rows = (d1 - d0) * g.out_plane();
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    float* chan = grad_in + ci * g.in_vox();
    for (std::int64_t kd = 0; kd < g.k; ++kd) {
      for (std::int64_t kh = 0; kh < g.k; ++kh) {
        std::int64_t h_lo, h_hi;
        valid_range(g.ih, g.oh, g.s, kh, g.p, h_lo, h_hi);
        for (std::int64_t kw = 0; kw < g.k; ++kw) {
          std::int64_t w_lo, w_hi;
          valid_range(g.iw, g.ow, g.s, kw, g.p, w_lo, w_hi);
          const std::int64_t column = (ci * g.k + kd) * g.k * g.k + kh * g.k + kw;
          const float* src_col = col + column * rows;
          for (std::int64_t od = d0; od < d1; ++od) {
            const std::int64_t idz = od * g.s + kd - g.p;
            if (idz < 0 || idz >= g.id) continue;
            const float* plane = src_col + (od - d0) * g.out_plane();
            for (std::int64_t oh = h_lo; oh < h_hi; ++oh) {
              const float* row = plane + oh * g.ow;
              float* dst = chan + idz * g.in_plane() + (oh * g.s + kh - g.p) * g.iw;
              if (g.s == 1) {
                float* d = dst + kw - g.p;
                for (std::int64_t ow = w_lo; ow < w_hi; ++ow) d[ow] += row[ow];
              } else {
                for (std::int64_t ow = w_lo; ow < w_hi; ++ow) dst[ow * g.s + kw - g.p] += row[ow];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  const Geometry g = make_geometry(input.shape(), spec);
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv3d: weight shape " + shape_to_string(weight.shape()) + ", expected " +
                     shape_to_string(spec.weight_shape()));
  }
  if (bias && bias->shape() != Shape{g.cout}) throw ShapeError("conv3d: bias must have shape [out_channels]");

  Tensor out(Shape{g.cout, g.od, g.oh, g.ow});
  const Eigen::Map<const ColMatrix> wt(weight.raw(), g.cols(), g.cout);

  if (g.pointwise()) {
    const Eigen::Map<const ColMatrix> x(input.raw(), g.in_vox(), g.cin);
    Eigen::Map<ColMatrix> y(out.raw(), g.out_vox(), g.cout);
    y.noalias() = x * wt;
  } else {
    const std::int64_t slab = g.slab_depth();
    std::vector<float> col(static_cast<std::size_t>(slab * g.out_plane() * g.cols()));
    for (std::int64_t d0 = 0; d0 < g.od; d0 += slab) {
      const std::int64_t d1 = std::min(d0 + slab, g.od);
      const std::int64_t rows = (d1 - d0) * g.out_plane();
      im2col(g, input.raw(), d0, d1, col.data());
      const Eigen::Map<const ColMatrix> c(col.data(), rows, g.cols());
      Eigen::Map<ColMatrix, 0, Strided> y(out.raw() + d0 * g.out_plane(), rows, g.cout, Strided(g.out_vox()));
      y.noalias() = c * wt;
    }
  }
  if (bias) {
    for (std::int64_t co = 0; co < g.cout; ++co) {
      const float b = (*bias)[co];
      float* dst = out.raw() + co * g.out_vox();
      for (std::int64_t v = 0; v < g.out_vox(); ++v) dst[v] += b;
    }
  }
  return out;
}

ConvGrads conv3d_backward(const Tensor& grad_output, const Tensor& input, const Tensor& weight, const ConvSpec& spec,
                          bool want_input, bool want_weight, bool want_bias) {
  const Geometry g = make_geometry(input.shape(), spec);
  if (grad_output.shape() != Shape{g.cout, g.od, g.oh, g.ow}) throw ShapeError("conv3d backward: bad grad shape");

  ConvGrads grads;
  const Eigen::Map<const ColMatrix> wt(weight.raw(), g.cols(), g.cout);

  if (want_bias) {
    grads.bias = Tensor(Shape{g.cout});
    for (std::int64_t co = 0; co < g.cout; ++co) {
      const float* src = grad_output.raw() + co * g.out_vox();
      double acc = 0.0;
      for (std::int64_t v = 0; v < g.out_vox(); ++v) acc += src[v];
      grads.bias[co] = static_cast<float>(acc);
    }
  }
  if (!want_input && !want_weight) return grads;

  if (want_input) grads.input = Tensor(input.shape());

  if (g.pointwise()) {
    const Eigen::Map<const ColMatrix> gy(grad_output.raw(), g.out_vox(), g.cout);
    if (want_input) {
      Eigen::Map<ColMatrix> gx(grads.input.raw(), g.in_vox(), g.cin);
      gx.noalias() = gy * wt.transpose();
    }
    if (want_weight) {
      grads.weight = Tensor(weight.shape());
      const Eigen::Map<const ColMatrix> x(input.raw(), g.in_vox(), g.cin);
      Eigen::Map<ColMatrix> gw(grads.weight.raw(), g.cols(), g.cout);
      gw.noalias() = x.transpose() * gy;
    }
    return grads;
  }

  const std::int64_t slab = g.slab_depth();
  std::vector<float> col(static_cast<std::size_t>(slab * g.out_plane() * g.cols()));
  Eigen::MatrixXd gw_acc;
  ColMatrix gw_slab;
  if (want_weight) gw_acc = Eigen::MatrixXd::Zero(g.cols(), g.cout);

  for (std::int64_t d0 = 0; d0 < g.od; d0 += slab) {
    const std::int64_t d1 = std::min(d0 + slab, g.od);
    const std::int64_t rows = (d1 - d0) * g.out_plane();
    const Eigen::Map<const ColMatrix, 0, Strided> gy(grad_output.raw() + d0 * g.out_plane(), rows, g.cout,
                                                      Strided(g.out_vox()));
    Eigen::Map<ColMatrix> c(col.data(), rows, g.cols());
    if (want_weight) {
      im2col(g, input.raw(), d0, d1, col.data());
      gw_slab.noalias() = c.transpose() * gy;
      gw_acc += gw_slab.cast<double>();
    }
    if (want_input) {
      c.noalias() = gy * wt.transpose();
      col2im(g, col.data(), d0, d1, grads.input.raw());
    }
  }
  if (want_weight) {
    grads.weight = Tensor(weight.shape());
    Eigen::Map<ColMatrix> gw(grads.weight.raw(), g.cols(), g.cout);
    gw = gw_acc.cast<float>();
  }
  return grads;
}

}  // namespace vaeseg::kernels
