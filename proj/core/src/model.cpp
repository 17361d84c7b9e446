#include "vaeseg/model.hpp"

#include <cmath>

#include "vaeseg/ops.hpp"

namespace vaeseg {

namespace {

std::string level_tag(std::int64_t level) { return std::to_string(level); }

void add_conv(std::vector<std::pair<std::string, Shape>>& out, const std::string& name, std::int64_t cin,
              std::int64_t cout, std::int64_t k) {
  out.emplace_back(name + ".weight", Shape{cout, cin, k, k, k});
  out.emplace_back(name + ".bias", Shape{cout});
}

void add_gn(std::vector<std::pair<std::string, Shape>>& out, const std::string& name, std::int64_t c) {
  out.emplace_back(name + ".gamma", Shape{c});
  out.emplace_back(name + ".beta", Shape{c});
}

void add_block(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::int64_t c) {
  add_gn(out, prefix + ".gn1", c);
  add_conv(out, prefix + ".conv1", c, c, 3);
  add_gn(out, prefix + ".gn2", c);
  add_conv(out, prefix + ".conv2", c, c, 3);
}

void add_dense(std::vector<std::pair<std::string, Shape>>& out, const std::string& name, std::int64_t in,
               std::int64_t outputs) {
  out.emplace_back(name + ".weight", Shape{outputs, in});
  out.emplace_back(name + ".bias", Shape{outputs});
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

// Graph-building helpers bound to one config and one parameter binding.
class Builder {
 public:
  Builder(const ModelConfig& cfg, BoundParameters& params) : cfg_(cfg), params_(params) {}

  Var conv(Var x, const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t stride) {
    const ConvSpec spec{cin, cout, k, stride};
    return ops::conv3d(x, params_[name + ".weight"], params_[name + ".bias"], spec);
  }

  Var gn(Var x, const std::string& name, std::int64_t channels) {
    const GroupNormSpec spec{channels, group_count(channels, cfg_.gn_groups), cfg_.gn_eps};
    return ops::group_norm(x, params_[name + ".gamma"], params_[name + ".beta"], spec);
  }

  Var block(Var x, const std::string& prefix, std::int64_t c) {
    Var y = conv(ops::relu(gn(x, prefix + ".gn1", c)), prefix + ".conv1", c, c, 3, 1);
    y = conv(ops::relu(gn(y, prefix + ".gn2", c)), prefix + ".conv2", c, c, 3, 1);
    return ops::add(y, x);
  }

  Var dense(Var x, const std::string& name) { return ops::dense(x, params_[name + ".weight"], params_[name + ".bias"]); }

  const ModelConfig& cfg() const { return cfg_; }

 private:
  const ModelConfig& cfg_;
  BoundParameters& params_;
};

struct Encoded {
  std::vector<Var> skips;  // output of every level, finest first
  Var endpoint;
};

Encoded encode(Builder& b, Var x, Rng* rng, bool training) {
  const ModelConfig& cfg = b.cfg();
  Encoded enc;
  Var h = b.conv(x, "encoder.init.conv", cfg.input_channels, cfg.base_filters, 3, 1);
  if (training && rng) h = ops::spatial_dropout(h, cfg.dropout_rate, *rng, true);
  for (std::int64_t level = 0; level < cfg.levels(); ++level) {
    const std::int64_t c = cfg.channels_at(level);
    const std::string prefix = "encoder.L" + level_tag(level);
    if (level > 0) h = b.conv(h, prefix + ".down.conv", cfg.channels_at(level - 1), c, 3, 2);
    for (std::int64_t blk = 0; blk < cfg.blocks_per_level[static_cast<std::size_t>(level)]; ++blk) {
      h = b.block(h, prefix + ".B" + std::to_string(blk), c);
    }
    enc.skips.push_back(h);
  }
  enc.endpoint = h;
  return enc;
}

Var decode_segmentation(Builder& b, const Encoded& enc) {
  const ModelConfig& cfg = b.cfg();
  Var h = enc.endpoint;
  for (std::int64_t level = cfg.levels() - 2; level >= 0; --level) {
    const std::int64_t c = cfg.channels_at(level);
    const std::string prefix = "decoder.L" + level_tag(level);
    h = b.conv(h, prefix + ".up.conv", cfg.channels_at(level + 1), c, 1, 1);
    h = ops::trilinear_upsample(h);
    h = ops::add(h, enc.skips[static_cast<std::size_t>(level)]);
    h = b.block(h, prefix + ".B0", c);
  }
  h = b.conv(h, "decoder.head.conv", cfg.base_filters, cfg.seg_channels, 1, 1);
  return ops::sigmoid(h);
}

void check_input(const ModelConfig& cfg, const Shape& shape, bool needs_vae) {
  if (shape.size() != 4 || shape[0] != cfg.input_channels) {
    throw ShapeError("model input must be [" + std::to_string(cfg.input_channels) + ",D,H,W], got " +
                     shape_to_string(shape));
  }
  const std::int64_t factor = cfg.downsample_factor();
  for (std::size_t a = 1; a < 4; ++a) {
    if (shape[a] % factor != 0) {
      throw ShapeError("model input spatial dims must be divisible by " + std::to_string(factor) + ", got " +
                       shape_to_string(shape));
    }
  }
  if (needs_vae) {
    for (std::size_t a = 1; a < 4; ++a) {
      if (shape[a] != cfg.crop_shape[a - 1]) {
        throw ShapeError("VAE branch needs the configured crop shape, got " + shape_to_string(shape));
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.base_filters = 32;
  c.crop_shape = {160, 192, 128};
  return c;
}

std::array<std::int64_t, 3> ModelConfig::endpoint_spatial() const {
  const std::int64_t f = downsample_factor();
  return {crop_shape[0] / f, crop_shape[1] / f, crop_shape[2] / f};
}

std::array<std::int64_t, 3> ModelConfig::vd_spatial() const {
  const auto e = endpoint_spatial();
  const ConvSpec down{1, 1, 3, 2};
  return {down.output_extent(e[0]), down.output_extent(e[1]), down.output_extent(e[2])};
}

std::int64_t ModelConfig::vd_flat_size() const {
  const auto v = vd_spatial();
  return vd_channels() * v[0] * v[1] * v[2];
}

void ModelConfig::validate() const {
  if (base_filters < 1) throw ConfigError("base_filters must be positive");
  if (blocks_per_level.size() < 2) throw ConfigError("need at least two encoder levels");
  for (auto b : blocks_per_level)
    if (b < 1) throw ConfigError("every level needs at least one block");
  if (input_channels < 1) throw ConfigError("input_channels must be positive");
  if (seg_channels != 3) throw ConfigError("seg_channels must be 3 (WT, TC, ET)");
  if (latent() < 2 || latent() % 2 != 0) throw ConfigError("latent_total must be even and >= 2");
  if (vd_channels() < 1) throw ConfigError("vd_conv_channels resolves to zero; use an even base_filters");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (gn_groups < 1) throw ConfigError("gn_groups must be positive");
  const std::int64_t factor = downsample_factor();
  for (auto d : crop_shape) {
    if (d < 1 || d % factor != 0) {
      throw ConfigError("crop dims must be divisible by " + std::to_string(factor) + ", got " + std::to_string(d));
    }
    // The VAE halves the endpoint once more and upsamples it back.
    if ((d / factor) % 2 != 0) {
      throw ConfigError("crop dims must be divisible by " + std::to_string(2 * factor) +
                        " for the VAE branch to restore the endpoint size, got " + std::to_string(d));
    }
  }
  try {
    for (std::int64_t level = 0; level < levels(); ++level) group_count(channels_at(level), gn_groups);
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------------------
// ParameterSet

void ParameterSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParameterSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const Tensor& ParameterSet::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("missing parameter " + std::string(name));
  return entries_[it->second].second;
}

Tensor& ParameterSet::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).at(name));
}

std::int64_t ParameterSet::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

ParameterSet ParameterSet::without_prefix(std::string_view prefix) const {
  ParameterSet out;
  for (const auto& [name, t] : entries_)
    if (!starts_with(name, prefix)) out.add(name, t);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const std::int64_t f = cfg.base_filters;
  add_conv(out, "encoder.init.conv", cfg.input_channels, f, 3);
  for (std::int64_t level = 0; level < cfg.levels(); ++level) {
    const std::int64_t c = cfg.channels_at(level);
    const std::string prefix = "encoder.L" + level_tag(level);
    if (level > 0) add_conv(out, prefix + ".down.conv", cfg.channels_at(level - 1), c, 3);
    for (std::int64_t blk = 0; blk < cfg.blocks_per_level[static_cast<std::size_t>(level)]; ++blk) {
      add_block(out, prefix + ".B" + std::to_string(blk), c);
    }
  }
  for (std::int64_t level = cfg.levels() - 2; level >= 0; --level) {
    const std::string prefix = "decoder.L" + level_tag(level);
    add_conv(out, prefix + ".up.conv", cfg.channels_at(level + 1), cfg.channels_at(level), 1);
    add_block(out, prefix + ".B0", cfg.channels_at(level));
  }
  add_conv(out, "decoder.head.conv", f, cfg.seg_channels, 1);

  const std::int64_t ce = cfg.endpoint_channels();
  add_gn(out, "vae.VD.gn", ce);
  add_conv(out, "vae.VD.conv", ce, cfg.vd_channels(), 3);
  add_dense(out, "vae.VD.dense", cfg.vd_flat_size(), cfg.latent());
  add_dense(out, "vae.VU.dense", cfg.latent_half(), cfg.vd_flat_size());
  add_conv(out, "vae.VU.conv", cfg.vd_channels(), ce, 1);
  for (std::int64_t level = cfg.levels() - 2; level >= 0; --level) {
    add_conv(out, "vae.VUp" + level_tag(level) + ".conv", cfg.channels_at(level + 1), cfg.channels_at(level), 1);
    add_block(out, "vae.VBlock" + level_tag(level), cfg.channels_at(level));
  }
  add_conv(out, "vae.Vend.conv", f, cfg.input_channels, 1);
  return out;
}

Model build_model(const ModelConfig& config, std::uint64_t init_seed) {
  Model model;
  model.config = config;
  Rng rng(init_seed);
  for (auto& [name, shape] : parameter_shapes(config)) {
    Tensor t(shape);
    if (ends_with(name, ".weight")) {
      const std::int64_t fan_in = t.numel() / shape[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    } else if (ends_with(name, ".gamma")) {
      t.fill(1.0f);
    }
    model.params.add(name, std::move(t));
  }
  return model;
}

std::vector<LayerShape> infer_shapes(const ModelConfig& cfg, const Shape& input_shape) {
  cfg.validate();
  if (input_shape.size() != 4 || input_shape[0] != cfg.input_channels) {
    throw ShapeError("infer_shapes: input must be [" + std::to_string(cfg.input_channels) + ",D,H,W]");
  }
  const std::int64_t factor = cfg.downsample_factor();
  for (std::size_t a = 1; a < 4; ++a) {
    if (input_shape[a] % (2 * factor) != 0) {
      throw ShapeError("infer_shapes: spatial dims must be divisible by " + std::to_string(2 * factor) + ", got " +
                       shape_to_string(input_shape));
    }
  }
  auto spatial = [&](std::int64_t c, std::int64_t div) {
    return Shape{c, input_shape[1] / div, input_shape[2] / div, input_shape[3] / div};
  };
  std::vector<LayerShape> rows;
  rows.push_back({"InitConv", spatial(cfg.base_filters, 1)});
  for (std::int64_t level = 0; level < cfg.levels(); ++level) {
    rows.push_back({"EncL" + level_tag(level), spatial(cfg.channels_at(level), std::int64_t{1} << level)});
  }
  for (std::int64_t level = cfg.levels() - 2; level >= 0; --level) {
    rows.push_back({"DecL" + level_tag(level), spatial(cfg.channels_at(level), std::int64_t{1} << level)});
  }
  rows.push_back({"SegHead", spatial(cfg.seg_channels, 1)});

  rows.push_back({"VD", Shape{cfg.latent()}});
  rows.push_back({"VDraw", Shape{cfg.latent_half()}});
  rows.push_back({"VU", spatial(cfg.endpoint_channels(), factor)});
  for (std::int64_t level = cfg.levels() - 2; level >= 0; --level) {
    const Shape s = spatial(cfg.channels_at(level), std::int64_t{1} << level);
    rows.push_back({"VUp" + level_tag(level), s});
    rows.push_back({"VBlock" + level_tag(level), s});
  }
  rows.push_back({"Vend", spatial(cfg.input_channels, 1)});
  return rows;
}

// ---------------------------------------------------------------------------
// BoundParameters

BoundParameters::BoundParameters(Graph& graph, const ParameterSet& params, bool requires_grad)
    : graph_(&graph), params_(&params), requires_grad_(requires_grad) {}

Var BoundParameters::operator[](const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return {*graph_, it->second};
  const NodeId id = graph_->leaf(params_->at(name), requires_grad_);
  bound_.emplace(name, id);
  return {*graph_, id};
}

std::map<std::string, Tensor> BoundParameters::named_gradients(const GradientMap& grads) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, value] : *params_) {
    auto it = bound_.find(name);
    if (it != bound_.end()) {
      auto g = grads.find(it->second);
      if (g != grads.end()) {
        out.emplace(name, g->second);
        continue;
      }
    }
    out.emplace(name, Tensor::zeros(value.shape()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward passes

ForwardOutputs forward(const ModelConfig& cfg, BoundParameters& params, Var input, Rng& rng, bool training) {
  cfg.validate();
  check_input(cfg, input.shape(), true);
  Builder b(cfg, params);
  const Encoded enc = encode(b, input, &rng, training);

  ForwardOutputs out;
  out.seg_probs = decode_segmentation(b, enc);

  const std::int64_t ce = cfg.endpoint_channels();
  const std::int64_t vd = cfg.vd_channels();
  Var v = ops::relu(b.gn(enc.endpoint, "vae.VD.gn", ce));
  v = b.conv(v, "vae.VD.conv", ce, vd, 3, 2);
  v = ops::reshape(v, Shape{cfg.vd_flat_size()});
  Var latent = b.dense(v, "vae.VD.dense");
  out.mu = ops::slice(latent, 0, cfg.latent_half());
  out.logvar = ops::slice(latent, cfg.latent_half(), cfg.latent_half());
  Var z = training ? ops::reparameterize(out.mu, out.logvar, rng) : out.mu;

  const auto vs = cfg.vd_spatial();
  Var u = b.dense(z, "vae.VU.dense");
  u = ops::reshape(u, Shape{vd, vs[0], vs[1], vs[2]});
  u = ops::relu(u);
  u = b.conv(u, "vae.VU.conv", vd, ce, 1, 1);
  u = ops::trilinear_upsample(u);
  for (std::int64_t level = cfg.levels() - 2; level >= 0; --level) {
    const std::int64_t c = cfg.channels_at(level);
    u = b.conv(u, "vae.VUp" + level_tag(level) + ".conv", cfg.channels_at(level + 1), c, 1, 1);
    u = ops::trilinear_upsample(u);
    u = b.block(u, "vae.VBlock" + level_tag(level), c);
  }
  out.recon = b.conv(u, "vae.Vend.conv", cfg.base_filters, cfg.input_channels, 1, 1);
  return out;
}

Var forward_seg_only(const ModelConfig& cfg, BoundParameters& params, Var input) {
  check_input(cfg, input.shape(), false);
  Builder b(cfg, params);
  const Encoded enc = encode(b, input, nullptr, false);
  return decode_segmentation(b, enc);
}

Tensor predict_probabilities(const Model& model, const Tensor& input) {
  Graph g;
  BoundParameters params(g, model.params, false);
  Var x = make_leaf(g, input, false);
  return forward_seg_only(model.config, params, x).value();
}

bool is_vae_parameter(std::string_view name) { return starts_with(name, "vae."); }
bool is_decoder_parameter(std::string_view name) { return starts_with(name, "decoder."); }
bool is_encoder_parameter(std::string_view name) { return starts_with(name, "encoder."); }

}  // namespace vaeseg
