#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vaeseg/checkpoint.hpp"
#include "vaeseg/config.hpp"
#include "vaeseg/data.hpp"
#include "vaeseg/metrics.hpp"
#include "vaeseg/trainer.hpp"

namespace vaeseg {

/// Bad user input (arguments, missing files, incompatible inputs).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using LogSink = std::function<void(const std::string&)>;

struct GenDataOptions {
  std::filesystem::path out_dir;
  std::int64_t count = 4;
  std::int64_t size = 32;
  std::uint64_t seed = 0;
  Difficulty difficulty = Difficulty::kLow;
};

/// Writes case_NNN.img.rvol / case_NNN.lbl.rvol pairs plus manifest.json.
std::vector<std::string> run_gen_data(const GenDataOptions& options, const LogSink& log = {});

/// Case names in a data directory (from manifest.json when present).
std::vector<std::string> list_cases(const std::filesystem::path& dir);

/// Raw image read from disk, then normalized.
Volume load_volume(const std::filesystem::path& image_path);
/// Normalized images with (WT, TC, ET) targets.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

struct TrainRunOptions {
  RunConfig config;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
};

struct TrainRunResult {
  std::vector<EpochStats> epochs;  // only those run by this call
  std::filesystem::path final_checkpoint;
};

/// Writes resolved_config.json, train_log.jsonl (one JSON object per epoch),
/// epoch_NNNN.ckpt every checkpoint_every epochs and final.ckpt.
TrainRunResult run_train(const TrainRunOptions& options, const LogSink& log = {});

struct InferOptions {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path input;
  std::filesystem::path output;
  bool tta = false;
  double threshold = 0.5;
};

LabelVolume run_infer(const InferOptions& options, const LogSink& log = {});

struct EvalOptions {
  std::filesystem::path pred_dir;
  std::filesystem::path gt_dir;
  std::filesystem::path report;
};

/// Per-case metrics plus means over cases, classes ordered ET, WT, TC.
/// Undefined values are null and excluded from the means; each mean carries
/// the number of cases it averages.
nlohmann::ordered_json run_eval(const EvalOptions& options, const LogSink& log = {});

/// JSON form of one case's metrics.
nlohmann::ordered_json report_to_json(const MetricsReport& report);

}  // namespace vaeseg
