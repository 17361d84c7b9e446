#include "vaeseg/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <type_traits>

namespace vaeseg {

namespace {

using json = nlohmann::json;

struct Field {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

template <typename T, typename Member>
Field scalar(const std::string& key, Member member) {
  return {[member](const RunConfig& c) { return json(member(const_cast<RunConfig&>(c))); },
          [member, key](RunConfig& c, const json& v) { member(c) = as<T>(v, key); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&](const std::string& key, Field f) { t.emplace_back(key, std::move(f)); };

    add("model.base_filters", scalar<std::int64_t>("model.base_filters",
                                                   [](RunConfig& c) -> auto& { return c.model.base_filters; }));
    add("model.blocks_per_level",
        {[](const RunConfig& c) { return json(c.model.blocks_per_level); },
         [](RunConfig& c, const json& v) {
           if (!v.is_array()) throw ConfigError("config key 'model.blocks_per_level' must be an array");
           std::vector<std::int64_t> b;
           for (const auto& e : v) b.push_back(as<std::int64_t>(e, "model.blocks_per_level"));
           c.model.blocks_per_level = b;
         }});
    add("model.input_channels", scalar<std::int64_t>("model.input_channels",
                                                     [](RunConfig& c) -> auto& { return c.model.input_channels; }));
    add("model.latent_total",
        scalar<std::int64_t>("model.latent_total", [](RunConfig& c) -> auto& { return c.model.latent_total; }));
    add("model.vd_conv_channels", scalar<std::int64_t>("model.vd_conv_channels",
                                                       [](RunConfig& c) -> auto& { return c.model.vd_conv_channels; }));
    add("model.dropout_rate",
        scalar<double>("model.dropout_rate", [](RunConfig& c) -> auto& { return c.model.dropout_rate; }));
    add("model.gn_groups", scalar<std::int64_t>("model.gn_groups", [](RunConfig& c) -> auto& { return c.model.gn_groups; }));
    add("model.gn_eps", scalar<float>("model.gn_eps", [](RunConfig& c) -> auto& { return c.model.gn_eps; }));

    add("train.epochs", scalar<std::int64_t>("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
    add("train.alpha0", scalar<double>("train.alpha0", [](RunConfig& c) -> auto& { return c.train.alpha0; }));
    add("train.lr_power", scalar<double>("train.lr_power", [](RunConfig& c) -> auto& { return c.train.lr_power; }));
    add("train.w_dice", scalar<double>("train.w_dice", [](RunConfig& c) -> auto& { return c.train.weights.w_dice; }));
    add("train.w_l2", scalar<double>("train.w_l2", [](RunConfig& c) -> auto& { return c.train.weights.w_l2; }));
    add("train.w_kl", scalar<double>("train.w_kl", [](RunConfig& c) -> auto& { return c.train.weights.w_kl; }));
    add("train.dice_eps",
        scalar<double>("train.dice_eps", [](RunConfig& c) -> auto& { return c.train.weights.dice_eps; }));
    add("train.l2_reduction",
        {[](const RunConfig& c) { return json(c.train.weights.l2_reduction == Reduction::kMean ? "mean" : "sum"); },
         [](RunConfig& c, const json& v) {
           const auto s = as<std::string>(v, "train.l2_reduction");
           if (s == "mean") {
             c.train.weights.l2_reduction = Reduction::kMean;
           } else if (s == "sum") {
             c.train.weights.l2_reduction = Reduction::kSum;
           } else {
             throw ConfigError("train.l2_reduction must be \"mean\" or \"sum\"");
           }
         }});
    add("train.weight_decay",
        scalar<double>("train.weight_decay", [](RunConfig& c) -> auto& { return c.train.weight_decay; }));
    add("train.kl_voxels",
        scalar<double>("train.kl_voxels", [](RunConfig& c) -> auto& { return c.train.kl_voxels; }));
    add("train.crop_shape",
        {[](const RunConfig& c) { return json(c.model.crop_shape); },
         [](RunConfig& c, const json& v) {
           if (!v.is_array() || v.size() != 3) throw ConfigError("train.crop_shape must be an array of 3 integers");
           for (std::size_t i = 0; i < 3; ++i) c.model.crop_shape[i] = as<std::int64_t>(v[i], "train.crop_shape");
         }});
    add("train.seed", scalar<std::uint64_t>("train.seed", [](RunConfig& c) -> auto& { return c.train.seed; }));
    add("train.checkpoint_every", scalar<std::int64_t>("train.checkpoint_every",
                                                       [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }));
    add("train.save_optimizer",
        scalar<bool>("train.save_optimizer", [](RunConfig& c) -> auto& { return c.train.save_optimizer; }));

    add("data.train_dir", scalar<std::string>("data.train_dir", [](RunConfig& c) -> auto& { return c.data.train_dir; }));
    add("data.val_dir", scalar<std::string>("data.val_dir", [](RunConfig& c) -> auto& { return c.data.val_dir; }));

    add("inference.tta", scalar<bool>("inference.tta", [](RunConfig& c) -> auto& { return c.inference.tta; }));
    add("inference.checkpoints",
        {[](const RunConfig& c) { return json(c.inference.checkpoints); },
         [](RunConfig& c, const json& v) {
           if (!v.is_array()) throw ConfigError("inference.checkpoints must be an array of paths");
           std::vector<std::string> p;
           for (const auto& e : v) p.push_back(as<std::string>(e, "inference.checkpoints"));
           c.inference.checkpoints = p;
         }});
    add("inference.threshold",
        scalar<double>("inference.threshold", [](RunConfig& c) -> auto& { return c.inference.threshold; }));
    return t;
  }();
  return table;
}

}  // namespace

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.weights = train.weights;
  o.weight_decay = train.weight_decay;
  o.kl_voxels = train.kl_voxels;
  return o;
}

void RunConfig::validate() const {
  model.validate();
  train.weights.validate();
  if (train.epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (!(train.alpha0 > 0.0)) throw ConfigError("train.alpha0 must be positive");
  if (!(train.lr_power > 0.0)) throw ConfigError("train.lr_power must be positive");
  if (train.weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (train.kl_voxels < 0.0) throw ConfigError("train.kl_voxels must be non-negative");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
  if (!(inference.threshold > 0.0 && inference.threshold < 1.0)) {
    throw ConfigError("inference.threshold must lie in (0, 1)");
  }
}

void RunConfig::validate_paths() const {
  auto need_dir = [](const std::string& key, const std::string& p) {
    if (!p.empty() && !std::filesystem::is_directory(p)) throw ConfigError(key + " does not exist: " + p);
  };
  need_dir("data.train_dir", data.train_dir);
  need_dir("data.val_dir", data.val_dir);
  for (const auto& c : inference.checkpoints) {
    if (!std::filesystem::is_regular_file(c)) throw ConfigError("checkpoint does not exist: " + c);
  }
}

RunConfig default_run_config() { return RunConfig{}; }

nlohmann::ordered_json to_json(const RunConfig& config) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [key, field] : fields()) j[key] = field.get(config);
  return j;
}

RunConfig apply_overrides(RunConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::map<std::string, const Field*> index;
  for (const auto& [key, field] : fields()) index[key] = &field;
  for (const auto& [key, value] : j.items()) {
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second->set(base, value);
  }
  return base;
}

RunConfig run_config_from_json(const nlohmann::json& j) { return apply_overrides(default_run_config(), j); }

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace vaeseg
