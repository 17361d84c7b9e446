#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaeseg/losses.hpp"
#include "vaeseg/model.hpp"
#include "vaeseg/optimizer.hpp"
#include "vaeseg/trainer.hpp"

namespace vaeseg {

struct TrainSettings {
  std::int64_t epochs = 300;
  double alpha0 = 1e-4;
  double lr_power = 0.9;
  LossWeights weights;
  double weight_decay = 1e-5;
  double kl_voxels = 0.0;  // 0: crop voxel count
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  bool save_optimizer = true;
};

struct DataSettings {
  std::string train_dir;
  std::string val_dir;
};

struct InferenceSettings {
  bool tta = false;
  std::vector<std::string> checkpoints;
  double threshold = 0.5;
};

/// Everything a run needs. Serialized as one flat JSON object with dotted
/// keys ("model.base_filters", "train.alpha0", ...); missing keys keep their
/// defaults, unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainSettings train;
  DataSettings data;
  InferenceSettings inference;

  Schedule schedule() const { return {train.alpha0, train.epochs, train.lr_power}; }
  TrainOptions train_options() const;

  void validate() const;
  /// Directories and files named by the config must exist.
  void validate_paths() const;
};

/// Defaults follow the published hyperparameters except for the model size
/// and crop, which are desk-scale (f = 8, 32^3).
RunConfig default_run_config();

nlohmann::ordered_json to_json(const RunConfig& config);
/// Applies the keys in `j` on top of `base`. Throws ConfigError on unknown
/// keys or wrong value types.
RunConfig apply_overrides(RunConfig base, const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace vaeseg
