#include "vaeseg/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace vaeseg {

double Schedule::lr_at(std::int64_t epoch) const {
  if (total_epochs < 1) throw std::invalid_argument("schedule needs at least one epoch");
  if (epoch < 0 || epoch > total_epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total_epochs) + "]");
  }
  const double frac = 1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return alpha0 * std::pow(frac, power);
}

bool is_conv_kernel(std::string_view name) {
  constexpr std::string_view suffix = ".weight";
  if (name.size() < suffix.size() || name.substr(name.size() - suffix.size()) != suffix) return false;
  const std::string_view layer = name.substr(0, name.size() - suffix.size());
  const auto dot = layer.rfind('.');
  const std::string_view leaf = dot == std::string_view::npos ? layer : layer.substr(dot + 1);
  return leaf.substr(0, 4) == "conv";
}

void adam_step(ParameterSet& params, const std::map<std::string, Tensor>& grads, AdamState& state, double lr,
               double weight_decay, const ParamPredicate& decay_on) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw std::invalid_argument("gradient for unknown parameter " + name);
    check_same_shape(params.at(name), g, "adam_step");
  }
  state.step += 1;
  const AdamHyper& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));

  for (auto& [name, w] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    auto [it, inserted] = state.moments.try_emplace(name);
    AdamMoments& mom = it->second;
    if (inserted) {
      mom.m = Tensor::zeros(w.shape());
      mom.v = Tensor::zeros(w.shape());
    }
    const bool decay = weight_decay > 0.0 && decay_on && decay_on(name);
    const std::int64_t n = w.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      double grad = g[i];
      if (decay) grad += 2.0 * weight_decay * w[i];
      const double m = h.beta1 * mom.m[i] + (1.0 - h.beta1) * grad;
      const double v = h.beta2 * mom.v[i] + (1.0 - h.beta2) * grad * grad;
      mom.m[i] = static_cast<float>(m);
      mom.v[i] = static_cast<float>(v);
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      w[i] = static_cast<float>(w[i] - lr * m_hat / (std::sqrt(v_hat) + h.eps));
    }
  }
}

}  // namespace vaeseg
