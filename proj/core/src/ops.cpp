#include "vaeseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>

namespace vaeseg {

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ShapeError("conv3d: channel counts must be positive");
  if (kernel != 1 && kernel != 3) throw ShapeError("conv3d: kernel must be 1 or 3");
  if (stride != 1 && stride != 2) throw ShapeError("conv3d: stride must be 1 or 2");
}

void GroupNormSpec::validate() const {
  if (channels < 1 || groups < 1 || channels % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(channels) +
                     " channels");
  }
  if (!(eps > 0.0f)) throw ShapeError("group_norm: eps must be positive");
}

std::int64_t group_count(std::int64_t channels, std::int64_t max_groups) {
  const std::int64_t groups = std::min(channels, max_groups);
  if (groups < 1 || channels % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(channels) +
                     " channels");
  }
  return groups;
}

namespace kernels {

namespace {

// One factor-2 linear pass along `axis` of a [C, D, H, W] tensor. For every
// output index the two source taps and weights come from the half-pixel
// rule; output = w0 * x[i0] + w1 * x[i1], a form that is bitwise symmetric
// under mirroring.
struct Taps {
  std::int64_t i0, i1;
  float w0, w1;
};

std::vector<Taps> upsample_taps(std::int64_t n) {
  std::vector<Taps> taps(static_cast<std::size_t>(2 * n));
  for (std::int64_t t = 0; t < 2 * n; ++t) {
    double src = (static_cast<double>(t) + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    const std::int64_t i1 = std::min(i0 + 1, n - 1);
    const auto lambda = static_cast<float>(src - static_cast<double>(i0));
    taps[static_cast<std::size_t>(t)] = {i0, i1, 1.0f - lambda, lambda};
  }
  return taps;
}

// outer x n x inner  ->  outer x 2n x inner
Tensor linear_pass(const Tensor& in, std::size_t axis) {
  const Shape& s = in.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::int64_t n = s[axis];
  Shape out_shape = s;
  out_shape[axis] = 2 * n;
  Tensor out(out_shape);
  const auto taps = upsample_taps(n);
  for (std::int64_t o = 0; o < outer; ++o) {
    const float* src = in.raw() + o * n * inner;
    float* dst = out.raw() + o * 2 * n * inner;
    for (std::int64_t t = 0; t < 2 * n; ++t) {
      const Taps& tp = taps[static_cast<std::size_t>(t)];
      const float* a = src + tp.i0 * inner;
      const float* b = src + tp.i1 * inner;
      float* d = dst + t * inner;
      for (std::int64_t i = 0; i < inner; ++i) d[i] = tp.w0 * a[i] + tp.w1 * b[i];
    }
  }
  return out;
}

// Transpose of linear_pass: 2n -> n.
Tensor linear_pass_backward(const Tensor& grad, std::size_t axis) {
  const Shape& s = grad.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::int64_t n = s[axis] / 2;
  Shape in_shape = s;
  in_shape[axis] = n;
  Tensor out(in_shape);
  const auto taps = upsample_taps(n);
  for (std::int64_t o = 0; o < outer; ++o) {
    const float* src = grad.raw() + o * 2 * n * inner;
    float* dst = out.raw() + o * n * inner;
    for (std::int64_t t = 0; t < 2 * n; ++t) {
      const Taps& tp = taps[static_cast<std::size_t>(t)];
      const float* g = src + t * inner;
      float* a = dst + tp.i0 * inner;
      float* b = dst + tp.i1 * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        a[i] += tp.w0 * g[i];
        b[i] += tp.w1 * g[i];
      }
    }
  }
  return out;
}

}  // namespace

Tensor upsample2x(const Tensor& input) {
  if (input.rank() != 4) throw ShapeError("trilinear_upsample: expected [C,D,H,W], got " + shape_to_string(input.shape()));
  return linear_pass(linear_pass(linear_pass(input, 3), 2), 1);
}

Tensor upsample2x_backward(const Tensor& grad_output, const Shape& input_shape) {
  Tensor g = linear_pass_backward(linear_pass_backward(linear_pass_backward(grad_output, 1), 2), 3);
  if (g.shape() != input_shape) throw ShapeError("trilinear_upsample backward: shape mismatch");
  return g;
}

Tensor flip_spatial(const Tensor& input, bool flip_d, bool flip_h, bool flip_w) {
  const Shape& s = input.shape();
  if (s.size() != 3 && s.size() != 4) throw ShapeError("flip_spatial: expected rank 3 or 4");
  const std::int64_t c = s.size() == 4 ? s[0] : 1;
  const std::size_t base = s.size() - 3;
  const std::int64_t d = s[base], h = s[base + 1], w = s[base + 2];
  Tensor out(s);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const float* src = input.raw() + ch * d * h * w;
    float* dst = out.raw() + ch * d * h * w;
    for (std::int64_t z = 0; z < d; ++z) {
      const std::int64_t sz = flip_d ? d - 1 - z : z;
      for (std::int64_t y = 0; y < h; ++y) {
        const std::int64_t sy = flip_h ? h - 1 - y : y;
        const float* row = src + (sz * h + sy) * w;
        float* out_row = dst + (z * h + y) * w;
        if (flip_w) {
          for (std::int64_t x = 0; x < w; ++x) out_row[x] = row[w - 1 - x];
        } else {
          std::copy(row, row + w, out_row);
        }
      }
    }
  }
  return out;
}

}  // namespace kernels

namespace ops {

namespace {

Graph& graph_of(Var v) {
  if (!v.valid()) throw std::invalid_argument("op received an unbound Var");
  return v.graph();
}

void check_same_graph(Var a, Var b) {
  if (&graph_of(a) != &graph_of(b)) throw std::invalid_argument("op inputs belong to different graphs");
}

Var record(Graph& g, const char* op, std::vector<NodeId> inputs, Tensor value, BackwardFn fn) {
  return {g, g.record(op, std::move(inputs), std::move(value), std::move(fn))};
}

std::vector<double> wide(Var v) { return v.graph().wide(v.id()); }

Var shadowed(Var y, std::vector<double> values) {
  if (!values.empty()) y.graph().set_f64(y.id(), std::move(values));
  return y;
}

// Elementwise f64 image of x under fn while the graph tracks shadows.
template <typename Fn>
Var map_shadow(Var y, Var x, Fn fn) {
  if (!x.graph().track_f64()) return y;
  std::vector<double> s = wide(x);
  for (double& v : s) v = fn(v);
  return shadowed(y, std::move(s));
}

// Direct-loop convolution in double, used only for shadows.
std::vector<double> conv3d_f64(const std::vector<double>& x, const Shape& xs, const std::vector<double>& w,
                               const std::vector<double>* b, const ConvSpec& spec) {
  const std::int64_t cin = spec.in_channels, cout = spec.out_channels, k = spec.kernel, st = spec.stride;
  const std::int64_t p = spec.padding();
  const std::int64_t id = xs[1], ih = xs[2], iw = xs[3];
  const std::int64_t od = spec.output_extent(id), oh = spec.output_extent(ih), ow = spec.output_extent(iw);
  std::vector<double> out(static_cast<std::size_t>(cout * od * oh * ow), 0.0);
  for (std::int64_t co = 0; co < cout; ++co) {
    double* dst = out.data() + co * od * oh * ow;
    if (b) std::fill(dst, dst + od * oh * ow, (*b)[static_cast<std::size_t>(co)]);
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      const double* src = x.data() + ci * id * ih * iw;
      for (std::int64_t kd = 0; kd < k; ++kd)
        for (std::int64_t kh = 0; kh < k; ++kh)
          for (std::int64_t kw = 0; kw < k; ++kw) {
            const double wv = w[static_cast<std::size_t>((((co * cin + ci) * k + kd) * k + kh) * k + kw)];
            for (std::int64_t z = 0; z < od; ++z) {
              const std::int64_t zi = z * st + kd - p;
              if (zi < 0 || zi >= id) continue;
              for (std::int64_t y = 0; y < oh; ++y) {
                const std::int64_t yi = y * st + kh - p;
                if (yi < 0 || yi >= ih) continue;
                const double* row = src + (zi * ih + yi) * iw;
                double* o = dst + (z * oh + y) * ow;
                for (std::int64_t xo = 0; xo < ow; ++xo) {
                  const std::int64_t xi = xo * st + kw - p;
                  if (xi >= 0 && xi < iw) o[xo] += wv * row[xi];
                }
              }
            }
          }
    }
  }
  return out;
}

std::vector<double> upsample_pass_f64(const std::vector<double>& in, Shape& s, std::size_t axis) {
  std::int64_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::int64_t n = s[axis];
  const auto taps = kernels::upsample_taps(n);
  std::vector<double> out(static_cast<std::size_t>(outer * 2 * n * inner));
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t t = 0; t < 2 * n; ++t) {
      const auto& tp = taps[static_cast<std::size_t>(t)];
      const double* a = in.data() + (o * n + tp.i0) * inner;
      const double* b = in.data() + (o * n + tp.i1) * inner;
      double* d = out.data() + (o * 2 * n + t) * inner;
      for (std::int64_t i = 0; i < inner; ++i) d[i] = double(tp.w0) * a[i] + double(tp.w1) * b[i];
    }
  s[axis] = 2 * n;
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  check_same_graph(a, b);
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.add_(b.value());
  Var y = record(a.graph(), "add", {a.id(), b.id()}, std::move(out), [](const BackwardContext& ctx) {
    for (std::size_t i = 0; i < 2; ++i)
      if (ctx.needs(i)) ctx.grad(i).add_(ctx.grad_output);
  });
  if (!a.graph().track_f64()) return y;
  std::vector<double> sa = wide(a);
  const std::vector<double> sb = wide(b);
  for (std::size_t i = 0; i < sa.size(); ++i) sa[i] += sb[i];
  return shadowed(y, std::move(sa));
}

Var mul(Var a, Var b) {
  check_same_graph(a, b);
  check_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const float* bv = b.value().raw();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  Graph& g = a.graph();
  std::vector<double> shadow;
  if (g.track_f64()) {
    shadow = wide(a);
    const std::vector<double> sb = wide(b);
    for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] *= sb[i];
  }
  Var y = record(g, "mul", {a.id(), b.id()}, std::move(out), [](const BackwardContext& ctx) {
    const Tensor& go = ctx.grad_output;
    for (std::size_t i = 0; i < 2; ++i) {
      if (!ctx.needs(i)) continue;
      const Tensor& other = ctx.input(1 - i);
      Tensor& gi = ctx.grad(i);
      for (std::int64_t k = 0; k < gi.numel(); ++k) gi[k] += go[k] * other[k];
    }
  });
  return shadowed(y, std::move(shadow));
}

Var scale(Var x, float factor) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= factor;
  Var y = record(graph_of(x), "scale", {x.id()}, std::move(out), [factor](const BackwardContext& ctx) {
    Tensor& g = ctx.grad(0);
    for (std::int64_t k = 0; k < g.numel(); ++k) g[k] += factor * ctx.grad_output[k];
  });
  return map_shadow(y, x, [factor](double v) { return double(factor) * v; });
}

// d relu / dx at exactly 0 is taken as 0.
Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  Var y = record(graph_of(x), "relu", {x.id()}, std::move(out), [](const BackwardContext& ctx) {
    const Tensor& in = ctx.input(0);
    Tensor& g = ctx.grad(0);
    for (std::int64_t k = 0; k < g.numel(); ++k)
      if (in[k] > 0.0f) g[k] += ctx.grad_output[k];
  });
  return map_shadow(y, x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = 1.0f / (1.0f + std::exp(-v));
  Var y = record(graph_of(x), "sigmoid", {x.id()}, std::move(out), [](const BackwardContext& ctx) {
    const Tensor& y = ctx.output;
    Tensor& g = ctx.grad(0);
    for (std::int64_t k = 0; k < g.numel(); ++k) g[k] += ctx.grad_output[k] * y[k] * (1.0f - y[k]);
  });
  return map_shadow(y, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var sum(Var x) {
  double acc = 0.0;
  if (const auto* s = x.graph().f64(x.id())) {
    for (double v : *s) acc += v;
  } else {
    for (float v : x.value().data()) acc += v;
  }
  Var out = record(graph_of(x), "sum", {x.id()}, Tensor::scalar(static_cast<float>(acc)), [](const BackwardContext& ctx) {
    const float go = ctx.grad_output[0];
    for (auto& v : ctx.grad(0).data()) v += go;
  });
  out.graph().set_scalar_f64(out.id(), acc);
  return out;
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  Var y = record(graph_of(x), "reshape", {x.id()}, std::move(out), [](const BackwardContext& ctx) {
    Tensor& g = ctx.grad(0);
    for (std::int64_t k = 0; k < g.numel(); ++k) g[k] += ctx.grad_output[k];
  });
  return map_shadow(y, x, [](double v) { return v; });
}

Var slice(Var x, std::int64_t start, std::int64_t length) {
  const Tensor& in = x.value();
  if (in.rank() != 1) throw ShapeError("slice: expected a rank-1 tensor");
  if (start < 0 || length < 1 || start + length > in.numel()) throw ShapeError("slice: range out of bounds");
  Tensor out(Shape{length});
  std::copy_n(in.raw() + start, length, out.raw());
  Var y = record(graph_of(x), "slice", {x.id()}, std::move(out), [start](const BackwardContext& ctx) {
    Tensor& g = ctx.grad(0);
    for (std::int64_t k = 0; k < ctx.grad_output.numel(); ++k) g[start + k] += ctx.grad_output[k];
  });
  if (!x.graph().track_f64()) return y;
  const std::vector<double> sx = wide(x);
  return shadowed(y, {sx.begin() + start, sx.begin() + start + length});
}

Var linear_combination(const std::vector<Var>& terms, const std::vector<double>& coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) {
    throw std::invalid_argument("linear_combination: need one coefficient per term");
  }
  Graph& g = graph_of(terms.front());
  std::vector<NodeId> ids;
  double acc = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    check_same_graph(terms.front(), terms[i]);
    if (terms[i].value().numel() != 1) throw ShapeError("linear_combination: terms must be scalars");
    acc += coeffs[i] * g.scalar_f64(terms[i].id());
    ids.push_back(terms[i].id());
  }
  Var out = record(g, "linear_combination", std::move(ids), Tensor::scalar(static_cast<float>(acc)),
                   [coeffs](const BackwardContext& ctx) {
                     for (std::size_t i = 0; i < coeffs.size(); ++i)
                       if (ctx.needs(i)) ctx.grad(i)[0] += static_cast<float>(coeffs[i] * ctx.grad_output[0]);
                   });
  g.set_scalar_f64(out.id(), acc);
  return out;
}

Var conv3d(Var input, Var weight, Var bias, const ConvSpec& spec) {
  check_same_graph(input, weight);
  const bool has_bias = bias.valid();
  if (has_bias) check_same_graph(input, bias);
  Tensor out = kernels::conv3d_forward(input.value(), weight.value(), has_bias ? &bias.value() : nullptr, spec);
  std::vector<NodeId> ids{input.id(), weight.id()};
  if (has_bias) ids.push_back(bias.id());
  Var y = record(input.graph(), "conv3d", std::move(ids), std::move(out), [spec, has_bias](const BackwardContext& ctx) {
    const bool want_bias = has_bias && ctx.needs(2);
    auto grads = kernels::conv3d_backward(ctx.grad_output, ctx.input(0), ctx.input(1), spec, ctx.needs(0), ctx.needs(1),
                                          want_bias);
    if (ctx.needs(0)) ctx.grad(0).add_(grads.input);
    if (ctx.needs(1)) ctx.grad(1).add_(grads.weight);
    if (want_bias) ctx.grad(2).add_(grads.bias);
  });
  if (!input.graph().track_f64()) return y;
  const std::vector<double> sb = has_bias ? wide(bias) : std::vector<double>();
  return shadowed(y, conv3d_f64(wide(input), input.shape(), wide(weight), has_bias ? &sb : nullptr, spec));
}

Var group_norm(Var input, Var gamma, Var beta, const GroupNormSpec& spec) {
  check_same_graph(input, gamma);
  check_same_graph(input, beta);
  spec.validate();
  const Tensor& x = input.value();
  if (x.rank() != 4 || x.dim(0) != spec.channels) {
    throw ShapeError("group_norm: input " + shape_to_string(x.shape()) + " does not have " +
                     std::to_string(spec.channels) + " channels");
  }
  if (gamma.shape() != Shape{spec.channels} || beta.shape() != Shape{spec.channels}) {
    throw ShapeError("group_norm: gamma/beta must have shape [channels]");
  }
  const std::int64_t cpg = spec.channels / spec.groups;
  const std::int64_t vox = x.numel() / spec.channels;
  const std::int64_t group_size = cpg * vox;

  // Saved for backward: normalized values and per-group inverse std.
  auto xhat = std::make_shared<Tensor>(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(spec.groups));
  Tensor out(x.shape());
  const float* gm = gamma.value().raw();
  const float* bt = beta.value().raw();
  for (std::int64_t grp = 0; grp < spec.groups; ++grp) {
    const float* src = x.raw() + grp * group_size;
    double mean = 0.0;
    for (std::int64_t i = 0; i < group_size; ++i) mean += src[i];
    mean /= static_cast<double>(group_size);
    double var = 0.0;
    for (std::int64_t i = 0; i < group_size; ++i) {
      const double d = src[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(group_size);
    const double istd = 1.0 / std::sqrt(var + spec.eps);
    (*inv_std)[static_cast<std::size_t>(grp)] = istd;
    for (std::int64_t c = 0; c < cpg; ++c) {
      const std::int64_t ch = grp * cpg + c;
      const float* cs = src + c * vox;
      float* xh = xhat->raw() + ch * vox;
      float* dst = out.raw() + ch * vox;
      for (std::int64_t i = 0; i < vox; ++i) {
        const double n = (cs[i] - mean) * istd;
        xh[i] = static_cast<float>(n);
        const double y = gm[ch] * n + bt[ch];
        dst[i] = static_cast<float>(y);
      }
    }
  }
  Var y = record(input.graph(), "group_norm", {input.id(), gamma.id(), beta.id()}, std::move(out),
                [spec, cpg, vox, xhat, inv_std](const BackwardContext& ctx) {
                  const Tensor& go = ctx.grad_output;
                  const float* gm = ctx.input(1).raw();
                  const std::int64_t group_size = cpg * vox;
                  if (ctx.needs(1) || ctx.needs(2)) {
                    for (std::int64_t ch = 0; ch < spec.channels; ++ch) {
                      const float* g = go.raw() + ch * vox;
                      const float* xh = xhat->raw() + ch * vox;
                      double dg = 0.0, db = 0.0;
                      for (std::int64_t i = 0; i < vox; ++i) {
                        dg += static_cast<double>(g[i]) * xh[i];
                        db += g[i];
                      }
                      if (ctx.needs(1)) ctx.grad(1)[ch] += static_cast<float>(dg);
                      if (ctx.needs(2)) ctx.grad(2)[ch] += static_cast<float>(db);
                    }
                  }
                  if (!ctx.needs(0)) return;
                  Tensor& gx = ctx.grad(0);
                  for (std::int64_t grp = 0; grp < spec.groups; ++grp) {
                    // dx = istd * (g - mean(g) - xhat * mean(g * xhat)), g = dy * gamma
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (std::int64_t c = 0; c < cpg; ++c) {
                      const std::int64_t ch = grp * cpg + c;
                      const float* dy = go.raw() + ch * vox;
                      const float* xh = xhat->raw() + ch * vox;
                      for (std::int64_t i = 0; i < vox; ++i) {
                        const double g = static_cast<double>(dy[i]) * gm[ch];
                        mean_g += g;
                        mean_gx += g * xh[i];
                      }
                    }
                    mean_g /= static_cast<double>(group_size);
                    mean_gx /= static_cast<double>(group_size);
                    const double istd = (*inv_std)[static_cast<std::size_t>(grp)];
                    for (std::int64_t c = 0; c < cpg; ++c) {
                      const std::int64_t ch = grp * cpg + c;
                      const float* dy = go.raw() + ch * vox;
                      const float* xh = xhat->raw() + ch * vox;
                      float* dst = gx.raw() + ch * vox;
                      for (std::int64_t i = 0; i < vox; ++i) {
                        const double g = static_cast<double>(dy[i]) * gm[ch];
                        dst[i] += static_cast<float>(istd * (g - mean_g - xh[i] * mean_gx));
                      }
                    }
                  }
                });
  if (!input.graph().track_f64()) return y;
  std::vector<double> sx = wide(input);
  const std::vector<double> sg = wide(gamma), sbt = wide(beta);
  for (std::int64_t grp = 0; grp < spec.groups; ++grp) {
    double* v = sx.data() + grp * group_size;
    double mean = 0.0, var = 0.0;
    for (std::int64_t i = 0; i < group_size; ++i) mean += v[i];
    mean /= static_cast<double>(group_size);
    for (std::int64_t i = 0; i < group_size; ++i) var += (v[i] - mean) * (v[i] - mean);
    var /= static_cast<double>(group_size);
    const double istd = 1.0 / std::sqrt(var + spec.eps);
    for (std::int64_t i = 0; i < group_size; ++i) {
      const auto ch = static_cast<std::size_t>(grp * cpg + i / vox);
      v[i] = sg[ch] * (v[i] - mean) * istd + sbt[ch];
    }
  }
  return shadowed(y, std::move(sx));
}

Var trilinear_upsample(Var input) {
  Tensor out = kernels::upsample2x(input.value());
  Var y = record(graph_of(input), "trilinear_upsample", {input.id()}, std::move(out), [](const BackwardContext& ctx) {
    ctx.grad(0).add_(kernels::upsample2x_backward(ctx.grad_output, ctx.input(0).shape()));
  });
  if (!input.graph().track_f64()) return y;
  Shape s = input.shape();
  std::vector<double> v = upsample_pass_f64(wide(input), s, 3);
  v = upsample_pass_f64(v, s, 2);
  return shadowed(y, upsample_pass_f64(v, s, 1));
}

Var spatial_dropout(Var input, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("spatial_dropout: rate must be in [0, 1)");
  const Tensor& x = input.value();
  if (x.rank() < 2) throw ShapeError("spatial_dropout: expected a channel-major tensor");
  if (!training || rate == 0.0) {
    Var y = record(graph_of(input), "spatial_dropout", {input.id()}, x, [](const BackwardContext& ctx) {
      ctx.grad(0).add_(ctx.grad_output);
    });
    return map_shadow(y, input, [](double v) { return v; });
  }
  const std::int64_t channels = x.dim(0);
  const std::int64_t vox = x.numel() / channels;
  const auto keep_scale = static_cast<float>(1.0 / (1.0 - rate));
  std::vector<float> mask(static_cast<std::size_t>(channels));
  for (auto& m : mask) m = rng.bernoulli(rate) ? 0.0f : keep_scale;
  Tensor out(x.shape());
  for (std::int64_t c = 0; c < channels; ++c) {
    const float m = mask[static_cast<std::size_t>(c)];
    for (std::int64_t i = 0; i < vox; ++i) out[c * vox + i] = m * x[c * vox + i];
  }
  std::vector<double> shadow;
  if (input.graph().track_f64()) {
    shadow = wide(input);
    for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] *= mask[i / static_cast<std::size_t>(vox)];
  }
  Var y = record(input.graph(), "spatial_dropout", {input.id()}, std::move(out),
                [mask = std::move(mask), vox](const BackwardContext& ctx) {
                  Tensor& g = ctx.grad(0);
                  for (std::size_t c = 0; c < mask.size(); ++c) {
                    const auto base = static_cast<std::int64_t>(c) * vox;
                    for (std::int64_t i = 0; i < vox; ++i) g[base + i] += mask[c] * ctx.grad_output[base + i];
                  }
                });
  return shadowed(y, std::move(shadow));
}

Var dense(Var input, Var weight, Var bias) {
  check_same_graph(input, weight);
  check_same_graph(input, bias);
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  if (x.rank() != 1 || w.rank() != 2 || w.dim(1) != x.dim(0) || bias.shape() != Shape{w.dim(0)}) {
    throw ShapeError("dense: incompatible shapes x" + shape_to_string(x.shape()) + " W" + shape_to_string(w.shape()) +
                     " b" + shape_to_string(bias.shape()));
  }
  using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::int64_t m = w.dim(0), n = w.dim(1);
  Tensor out = bias.value();
  {
    const Eigen::Map<const RowMatrix> wm(w.raw(), m, n);
    const Eigen::Map<const Eigen::VectorXf> xv(x.raw(), n);
    Eigen::Map<Eigen::VectorXf> y(out.raw(), m);
    y.noalias() += wm * xv;
  }
  Var y = record(input.graph(), "dense", {input.id(), weight.id(), bias.id()}, std::move(out),
                [m, n](const BackwardContext& ctx) {
                  const Eigen::Map<const Eigen::VectorXf> gy(ctx.grad_output.raw(), m);
                  if (ctx.needs(0)) {
                    const Eigen::Map<const RowMatrix> wm(ctx.input(1).raw(), m, n);
                    Eigen::Map<Eigen::VectorXf> gx(ctx.grad(0).raw(), n);
                    gx.noalias() += wm.transpose() * gy;
                  }
                  if (ctx.needs(1)) {
                    const Eigen::Map<const Eigen::VectorXf> xv(ctx.input(0).raw(), n);
                    Eigen::Map<RowMatrix> gw(ctx.grad(1).raw(), m, n);
                    gw.noalias() += gy * xv.transpose();
                  }
                  if (ctx.needs(2)) ctx.grad(2).add_(ctx.grad_output);
                });
  if (!input.graph().track_f64()) return y;
  std::vector<double> sy = wide(bias);
  const std::vector<double> sx = wide(input), sw = wide(weight);
  for (std::int64_t r = 0; r < m; ++r)
    for (std::int64_t c = 0; c < n; ++c) sy[static_cast<std::size_t>(r)] += sw[static_cast<std::size_t>(r * n + c)] * sx[static_cast<std::size_t>(c)];
  return shadowed(y, std::move(sy));
}

Var reparameterize(Var mu, Var logvar, const Tensor& noise) {
  check_same_graph(mu, logvar);
  check_same_shape(mu.value(), logvar.value(), "reparameterize");
  check_same_shape(mu.value(), noise, "reparameterize noise");
  Tensor out = mu.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += std::exp(0.5f * logvar.value()[i]) * noise[i];
  Var y = record(mu.graph(), "reparameterize", {mu.id(), logvar.id()}, std::move(out),
                [noise](const BackwardContext& ctx) {
                  if (ctx.needs(0)) ctx.grad(0).add_(ctx.grad_output);
                  if (ctx.needs(1)) {
                    const Tensor& lv = ctx.input(1);
                    Tensor& g = ctx.grad(1);
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                      g[i] += ctx.grad_output[i] * 0.5f * std::exp(0.5f * lv[i]) * noise[i];
                  }
                });
  if (!mu.graph().track_f64()) return y;
  std::vector<double> sm = wide(mu);
  const std::vector<double> sl = wide(logvar);
  for (std::size_t i = 0; i < sm.size(); ++i) sm[i] += std::exp(0.5 * sl[i]) * noise[static_cast<std::int64_t>(i)];
  return shadowed(y, std::move(sm));
}

Var reparameterize(Var mu, Var logvar, Rng& rng) {
  Tensor noise(mu.shape());
  for (auto& e : noise.data()) e = static_cast<float>(rng.normal());
  return reparameterize(mu, logvar, noise);
}

}  // namespace ops

}  // namespace vaeseg
