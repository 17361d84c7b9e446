#pragma once

#include <cstdint>
#include <functional>

#include "vaeseg/autodiff.hpp"

namespace vaeseg {

/// Builds a scalar from a leaf placed in a fresh graph.
using ScalarClosure = std::function<Var(Graph&, Var)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::int64_t checked = 0;
  /// Elements whose ±h perturbation flips the sign of some ReLU input.
  std::int64_t skipped = 0;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of `closure` at `input` against central
/// differences with step h. Per element the error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8); the difference
/// quotient is formed in double from the closure's f64 scalar (see
/// Graph::scalar_f64).
GradCheckResult grad_check(const ScalarClosure& closure, const Tensor& input, double h);

}  // namespace vaeseg
