#pragma once

#include <cstdint>
#include <vector>

#include "vaeseg/autodiff.hpp"
#include "vaeseg/rng.hpp"
#include "vaeseg/tensor.hpp"

namespace vaeseg {

/// Cubic 3D convolution geometry. Padding is always kernel / 2.
struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 3;  // 1 or 3
  std::int64_t stride = 1;  // 1 or 2

  std::int64_t padding() const { return kernel / 2; }
  std::int64_t output_extent(std::int64_t in) const { return (in + 2 * padding() - kernel) / stride + 1; }
  Shape weight_shape() const { return {out_channels, in_channels, kernel, kernel, kernel}; }
  void validate() const;
};

struct GroupNormSpec {
  std::int64_t channels = 1;
  std::int64_t groups = 1;
  float eps = 1e-5f;

  void validate() const;
};

/// Number of GroupNorm groups used for a layer with `channels` channels:
/// min(max_groups, channels), which must divide channels.
std::int64_t group_count(std::int64_t channels, std::int64_t max_groups);

namespace ops {

// Elementwise and shape plumbing.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, float factor);
Var relu(Var x);
Var sigmoid(Var x);
Var sum(Var x);
Var reshape(Var x, Shape shape);
/// Contiguous range [start, start + length) of a rank-1 tensor.
Var slice(Var x, std::int64_t start, std::int64_t length);
/// Σ coeffs[i] · terms[i] over scalar terms.
Var linear_combination(const std::vector<Var>& terms, const std::vector<double>& coeffs);

/// Cross-correlation with zero padding. `bias` may be a default Var (no bias).
Var conv3d(Var input, Var weight, Var bias, const ConvSpec& spec);

Var group_norm(Var input, Var gamma, Var beta, const GroupNormSpec& spec);

/// Factor-2 trilinear upsampling with half-pixel centres: the source
/// coordinate of output index t is (t + 0.5) / 2 - 0.5, clamped to the
/// valid range.
Var trilinear_upsample(Var input);

/// Channel dropout with inverted scaling. Identity when !training or rate == 0.
Var spatial_dropout(Var input, double rate, Rng& rng, bool training);

/// W · x + b with W of shape [m, n].
Var dense(Var input, Var weight, Var bias);

/// mu + exp(0.5 · logvar) ⊙ ε with ε ~ N(0, I) drawn from rng.
Var reparameterize(Var mu, Var logvar, Rng& rng);
/// Same as above with caller-supplied ε (not differentiated).
Var reparameterize(Var mu, Var logvar, const Tensor& noise);

}  // namespace ops

// Raw kernels, shared by the ops above and by the benchmarks.
namespace kernels {

Tensor conv3d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);

struct ConvGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
ConvGrads conv3d_backward(const Tensor& grad_output, const Tensor& input, const Tensor& weight, const ConvSpec& spec,
                          bool want_input, bool want_weight, bool want_bias);

Tensor upsample2x(const Tensor& input);
Tensor upsample2x_backward(const Tensor& grad_output, const Shape& input_shape);

/// Mirror a [C, D, H, W] (or [D, H, W]) tensor along the given spatial axes
/// (0 = D, 1 = H, 2 = W).
Tensor flip_spatial(const Tensor& input, bool flip_d, bool flip_h, bool flip_w);

}  // namespace kernels

}  // namespace vaeseg
