#include "vaeseg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace vaeseg {

namespace {

struct Evaluation {
  double value = 0.0;
  // One entry per ReLU input element: 1 if > 0, else 0. An input sitting
  // exactly on the kink reads 0 and flips to 1 under +h.
  std::vector<std::uint8_t> relu_pattern;
};

Evaluation evaluate(const ScalarClosure& closure, const Tensor& input) {
  Graph g;
  g.set_track_f64(true);
  Var x = make_leaf(g, input, false);
  Var y = closure(g, x);
  if (y.value().numel() != 1) throw ShapeError("grad_check: closure output must be scalar");
  Evaluation e;
  e.value = g.scalar_f64(y.id());
  for (NodeId id = 0; id < g.size(); ++id) {
    if (g.op(id) != "relu") continue;
    for (float v : g.value(g.inputs(id)[0]).data()) {
      e.relu_pattern.push_back(v > 0.0f ? 1 : 0);
    }
  }
  return e;
}

}  // namespace

GradCheckResult grad_check(const ScalarClosure& closure, const Tensor& input, double h) {
  if (!(h >= 1e-4 && h <= 1e-2)) throw std::invalid_argument("grad_check: step must lie in [1e-4, 1e-2]");

  Graph g;
  Var x = make_leaf(g, input, true);
  Var y = closure(g, x);
  if (y.value().numel() != 1) throw ShapeError("grad_check: closure output must be scalar");
  const Evaluation base = evaluate(closure, input);
  const Tensor analytic = g.backward(y.id()).at(x.id());

  GradCheckResult result;
  Tensor probe = input;
  for (std::int64_t i = 0; i < input.numel(); ++i) {
    const float original = input[i];
    const auto plus = static_cast<float>(original + h);
    const auto minus = static_cast<float>(original - h);
    probe[i] = plus;
    const Evaluation ep = evaluate(closure, probe);
    probe[i] = minus;
    const Evaluation em = evaluate(closure, probe);
    probe[i] = original;

    if (ep.relu_pattern != base.relu_pattern || em.relu_pattern != base.relu_pattern) {
      ++result.skipped;
      continue;
    }
    const double numeric = (ep.value - em.value) / (static_cast<double>(plus) - static_cast<double>(minus));
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    ++result.checked;
    if (err > result.max_relative_error || result.worst_index < 0) {
      result.max_relative_error = err;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace vaeseg
