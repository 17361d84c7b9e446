#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vaeseg/autodiff.hpp"
#include "vaeseg/rng.hpp"
#include "vaeseg/tensor.hpp"

namespace vaeseg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Architecture hyperparameters. Zero for latent_total / vd_conv_channels
/// means "derive from base_filters" (8·f and f/2).
struct ModelConfig {
  std::int64_t base_filters = 8;
  std::vector<std::int64_t> blocks_per_level = {1, 2, 2, 4};
  std::int64_t input_channels = 4;
  std::int64_t seg_channels = 3;
  std::int64_t latent_total = 0;
  std::int64_t vd_conv_channels = 0;
  std::array<std::int64_t, 3> crop_shape = {32, 32, 32};
  double dropout_rate = 0.2;
  std::int64_t gn_groups = 8;
  float gn_eps = 1e-5f;

  /// The published configuration: f = 32, crop 160x192x128.
  static ModelConfig full_scale();

  std::int64_t levels() const { return static_cast<std::int64_t>(blocks_per_level.size()); }
  std::int64_t channels_at(std::int64_t level) const { return base_filters << level; }
  std::int64_t endpoint_channels() const { return channels_at(levels() - 1); }
  std::int64_t downsample_factor() const { return std::int64_t{1} << (levels() - 1); }
  std::int64_t latent() const { return latent_total > 0 ? latent_total : 8 * base_filters; }
  std::int64_t latent_half() const { return latent() / 2; }
  std::int64_t vd_channels() const { return vd_conv_channels > 0 ? vd_conv_channels : base_filters / 2; }
  std::array<std::int64_t, 3> endpoint_spatial() const;
  /// Spatial extent after the VAE's stride-2 reduction of the endpoint.
  std::array<std::int64_t, 3> vd_spatial() const;
  std::int64_t vd_flat_size() const;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Ordered named parameter table. Iteration order is construction order.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  std::size_t size() const { return entries_.size(); }
  std::int64_t total_elements() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Copy without any parameter whose name starts with `prefix`.
  ParameterSet without_prefix(std::string_view prefix) const;
  bool operator==(const ParameterSet& other) const { return entries_ == other.entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct Model {
  ModelConfig config;
  ParameterSet params;
};

/// Name and shape of every parameter the configuration induces.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);

/// Fan-in scaled uniform init (bound sqrt(6 / fan_in)) for conv and dense
/// weights, zero biases, unit gamma, zero beta.
Model build_model(const ModelConfig& config, std::uint64_t init_seed);

struct LayerShape {
  std::string name;
  Shape shape;
};

/// Symbolic shape propagation for input [input_channels, D, H, W]. Rows use
/// stage names (InitConv, EncL*, DecL*, SegHead, VD, VDraw, VU, VUp*, VBlock*, Vend).
std::vector<LayerShape> infer_shapes(const ModelConfig& config, const Shape& input_shape);

/// Binds model parameters into a graph on first use. Parameters that are
/// never touched (e.g. the VAE branch during inference) need not exist.
class BoundParameters {
 public:
  BoundParameters(Graph& graph, const ParameterSet& params, bool requires_grad);

  Var operator[](const std::string& name);
  Graph& graph() const { return *graph_; }
  const std::map<std::string, NodeId>& bound() const { return bound_; }

  /// Gradients by parameter name; unbound parameters get zero tensors.
  std::map<std::string, Tensor> named_gradients(const GradientMap& grads) const;

 private:
  Graph* graph_;
  const ParameterSet* params_;
  bool requires_grad_;
  std::map<std::string, NodeId> bound_;
};

struct ForwardOutputs {
  Var seg_probs;  // [3, D, H, W]
  Var recon;      // [4, D, H, W]
  Var mu;         // [latent/2]
  Var logvar;     // [latent/2]
};

/// Full network. training=false disables dropout and sets z = mu.
ForwardOutputs forward(const ModelConfig& config, BoundParameters& params, Var input, Rng& rng, bool training);

/// Encoder and segmentation decoder only, in inference mode. Input spatial
/// dims must be divisible by the downsampling factor but need not equal the
/// configured crop.
Var forward_seg_only(const ModelConfig& config, BoundParameters& params, Var input);

/// Convenience: evaluates forward_seg_only on a fresh graph.
Tensor predict_probabilities(const Model& model, const Tensor& input);

bool is_vae_parameter(std::string_view name);
bool is_decoder_parameter(std::string_view name);
bool is_encoder_parameter(std::string_view name);

}  // namespace vaeseg
