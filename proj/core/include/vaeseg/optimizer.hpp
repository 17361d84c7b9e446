#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "vaeseg/model.hpp"
#include "vaeseg/tensor.hpp"

namespace vaeseg {

/// Polynomial decay alpha0 * (1 - e / total_epochs)^power, indexed by epoch.
struct Schedule {
  double alpha0 = 1e-4;
  std::int64_t total_epochs = 300;
  double power = 0.9;

  double lr_at(std::int64_t epoch) const;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
  bool operator==(const AdamMoments&) const = default;
};

struct AdamState {
  AdamHyper hyper;
  std::int64_t step = 0;
  std::map<std::string, AdamMoments> moments;

  bool operator==(const AdamState& other) const { return step == other.step && moments == other.moments; }
};

using ParamPredicate = std::function<bool(std::string_view)>;

/// Convolution kernels: names like "...conv.weight" / "...conv1.weight".
bool is_conv_kernel(std::string_view name);

/// One bias-corrected Adam update. For parameters selected by `decay_on`,
/// 2·weight_decay·w is added to the gradient before the moment update
/// (classic L2 regularization coupled with the adaptive step).
void adam_step(ParameterSet& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr,
               double weight_decay, const ParamPredicate& decay_on = is_conv_kernel);

}  // namespace vaeseg
