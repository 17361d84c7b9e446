#include "vaeseg/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "vaeseg/inference.hpp"
#include "vaeseg/rvol.hpp"

namespace vaeseg {

namespace fs = std::filesystem;

namespace {

constexpr const char* kImageSuffix = ".img.rvol";
constexpr const char* kLabelSuffix = ".lbl.rvol";

void emit(const LogSink& log, const std::string& msg) {
  if (log) log(msg);
}

std::string case_name(std::int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03lld", static_cast<long long>(i));
  return buf;
}

std::string epoch_file(std::int64_t e) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04lld.ckpt", static_cast<long long>(e));
  return buf;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> scan(const fs::path& dir, const std::string& suffix) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string f = entry.path().filename().string();
    if (entry.is_regular_file() && ends_with(f, suffix)) names.push_back(f.substr(0, f.size() - suffix.size()));
  }
  std::sort(names.begin(), names.end());
  return names;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::uint64_t init_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x1f1f1f1fULL); }

// Keeps log lines of epochs before `start` so a resumed log matches an uninterrupted one.
std::string retained_log(const fs::path& path, std::int64_t start) {
  std::ifstream in(path);
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("epoch") && j["epoch"].get<std::int64_t>() < start) kept += line + "\n";
  }
  return kept;
}

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

using MetricGetter = std::optional<double> ClassMetrics::*;
const std::vector<std::pair<std::string, MetricGetter>>& metric_columns() {
  static const std::vector<std::pair<std::string, MetricGetter>> cols{
      {"dice", &ClassMetrics::dice},
      {"hausdorff_95", &ClassMetrics::hausdorff_95},
      {"hausdorff_max", &ClassMetrics::hausdorff_max},
      {"sensitivity", &ClassMetrics::sensitivity},
      {"specificity", &ClassMetrics::specificity}};
  return cols;
}

}  // namespace

std::vector<std::string> run_gen_data(const GenDataOptions& options, const LogSink& log) {
  if (options.count < 1) throw UsageError("count must be at least 1");
  if (options.size < 16 || options.size % 8 != 0) throw UsageError("size must be a multiple of 8 and at least 16");
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (!fs::is_directory(options.out_dir)) throw std::runtime_error("cannot create " + options.out_dir.string());

  std::vector<std::string> names;
  for (std::int64_t i = 0; i < options.count; ++i) {
    const std::string name = case_name(i);
    const std::uint64_t seed = splitmix64(options.seed ^ splitmix64(static_cast<std::uint64_t>(i) + 1));
    const Phantom p = gen_phantom(seed, options.size, options.difficulty);
    write_image_rvol(options.out_dir / (name + kImageSuffix), p.volume.image);
    write_label_rvol(options.out_dir / (name + kLabelSuffix), p.labels);
    names.push_back(name);
  }
  nlohmann::ordered_json m;
  m["cases"] = names;
  m["size"] = options.size;
  m["seed"] = options.seed;
  m["difficulty"] = to_string(options.difficulty);
  write_text(options.out_dir / "manifest.json", m.dump(2) + "\n");
  emit(log, "wrote " + std::to_string(names.size()) + " cases to " + options.out_dir.string());
  return names;
}

std::vector<std::string> list_cases(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  if (fs::is_regular_file(manifest)) {
    std::ifstream in(manifest);
    try {
      return nlohmann::json::parse(in).at("cases").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("bad manifest " + manifest.string() + ": " + e.what());
    }
  }
  return scan(dir, kImageSuffix);
}

Volume load_volume(const fs::path& image_path) {
  Volume v{read_image_rvol(image_path)};
  v.validate();
  return normalize(v);
}

std::vector<Sample> load_dataset(const fs::path& dir) {
  std::vector<Sample> out;
  for (const std::string& name : list_cases(dir)) {
    const fs::path img = dir / (name + kImageSuffix);
    const fs::path lbl = dir / (name + kLabelSuffix);
    if (!fs::is_regular_file(img) || !fs::is_regular_file(lbl)) throw UsageError("case " + name + " is incomplete");
    Volume v = load_volume(img);
    const LabelVolume labels = read_label_rvol(lbl);
    if (labels.shape != v.spatial()) throw UsageError("case " + name + ": image and label shapes differ");
    out.push_back({name, std::move(v), labels_to_channels(labels)});
  }
  return out;
}

TrainRunResult run_train(const TrainRunOptions& options, const LogSink& log) {
  const RunConfig& cfg = options.config;
  cfg.validate();
  cfg.validate_paths();
  if (cfg.data.train_dir.empty()) throw UsageError("data.train_dir is required for training");
  const std::vector<Sample> dataset = load_dataset(cfg.data.train_dir);
  if (dataset.empty()) throw UsageError("training set is empty");

  Model model;
  AdamState adam;
  std::int64_t start = 0;
  if (options.resume) {
    if (!fs::is_regular_file(*options.resume)) throw UsageError("resume checkpoint not found: " + options.resume->string());
    Checkpoint ck = load_checkpoint(*options.resume);
    if (!(ck.config.model == cfg.model)) throw UsageError("resume checkpoint was trained with a different model config");
    for (const auto& [name, shape] : parameter_shapes(cfg.model)) {
      if (!ck.params.contains(name)) throw UsageError("resume checkpoint lacks parameter " + name);
    }
    model = ck.model();
    if (ck.adam) adam = *ck.adam;
    start = ck.epochs_completed;
    if (start > cfg.train.epochs) throw UsageError("resume checkpoint is past the configured epoch count");
    emit(log, "resuming at epoch " + std::to_string(start));
  } else {
    model = build_model(cfg.model, init_seed(cfg.train.seed));
  }

  fs::create_directories(options.out_dir);
  write_text(options.out_dir / "resolved_config.json", to_json(cfg).dump(2) + "\n");
  emit(log, "config " + to_json(cfg).dump());

  const fs::path log_path = options.out_dir / "train_log.jsonl";
  const std::string kept = start > 0 && fs::exists(log_path) ? retained_log(log_path, start) : std::string();
  std::ofstream log_out(log_path, std::ios::trunc);
  if (!log_out) throw std::runtime_error("cannot write " + log_path.string());
  log_out << kept;

  const Schedule schedule = cfg.schedule();
  const TrainOptions topts = cfg.train_options();
  const Rng run_rng(cfg.train.seed);
  const SaveOptions save{cfg.train.save_optimizer, true};
  TrainRunResult result;
  for (std::int64_t e = start; e < cfg.train.epochs; ++e) {
    const EpochStats s = train_epoch(model, dataset, run_rng, adam, schedule, e, topts);
    nlohmann::ordered_json line;
    line["epoch"] = e;
    line["lr"] = s.lr;
    line["dice_loss"] = s.mean.dice;
    line["l2"] = s.mean.l2;
    line["kl"] = s.mean.kl;
    line["total"] = s.mean.total;
    log_out << line.dump() << '\n' << std::flush;
    emit(log, line.dump());
    result.epochs.push_back(s);

    const std::int64_t done = e + 1;
    if (cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 && done < cfg.train.epochs) {
      save_checkpoint(options.out_dir / epoch_file(done), {cfg, model.params, adam, done}, save);
    }
  }
  result.final_checkpoint = options.out_dir / "final.ckpt";
  save_checkpoint(result.final_checkpoint, {cfg, model.params, adam, cfg.train.epochs}, save);
  emit(log, "saved " + result.final_checkpoint.string());
  return result;
}

LabelVolume run_infer(const InferOptions& options, const LogSink& log) {
  if (options.checkpoints.empty()) throw UsageError("at least one checkpoint is required");
  if (!(options.threshold > 0.0 && options.threshold < 1.0)) throw UsageError("threshold must lie in (0, 1)");
  if (!fs::is_regular_file(options.input)) throw UsageError("input volume not found: " + options.input.string());
  std::vector<Model> models;
  for (const auto& p : options.checkpoints) {
    if (!fs::is_regular_file(p)) throw UsageError("checkpoint not found: " + p.string());
    models.push_back(load_checkpoint(p).model());
    if (!(models.back().config == models.front().config)) {
      throw UsageError("checkpoint " + p.string() + " is incompatible with " + options.checkpoints.front().string());
    }
  }
  const Volume volume = load_volume(options.input);
  const Tensor probs = ensemble_predict(models, volume, options.tta);
  LabelVolume labels = channels_to_labels(probs, options.threshold);
  if (!options.output.parent_path().empty()) fs::create_directories(options.output.parent_path());
  write_label_rvol(options.output, labels);
  emit(log, "wrote " + options.output.string() + " from " + std::to_string(models.size()) + " model(s)" +
                (options.tta ? " with flip averaging" : ""));
  return labels;
}

nlohmann::ordered_json report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  for (const auto& [column, member] : metric_columns()) {
    nlohmann::ordered_json row;
    for (std::size_t i = 0; i < kReportOrder.size(); ++i) row[to_string(kReportOrder[i])] = opt(report.classes[i].*member);
    j[column] = row;
  }
  return j;
}

nlohmann::ordered_json run_eval(const EvalOptions& options, const LogSink& log) {
  const std::vector<std::string> gt = scan(options.gt_dir, kLabelSuffix);
  const std::vector<std::string> pred = scan(options.pred_dir, kLabelSuffix);
  for (const auto& n : gt)
    if (!std::binary_search(pred.begin(), pred.end(), n)) throw UsageError("no prediction for case " + n);
  for (const auto& n : pred)
    if (!std::binary_search(gt.begin(), gt.end(), n)) throw UsageError("no ground truth for case " + n);
  if (gt.empty()) throw UsageError("no label files in " + options.gt_dir.string());

  nlohmann::ordered_json report;
  report["classes"] = {"ET", "WT", "TC"};
  nlohmann::ordered_json cases = nlohmann::ordered_json::array();
  std::map<std::string, std::array<std::pair<double, std::int64_t>, 3>> sums;
  for (const auto& name : gt) {
    const LabelVolume p = read_label_rvol(options.pred_dir / (name + kLabelSuffix));
    const LabelVolume g = read_label_rvol(options.gt_dir / (name + kLabelSuffix));
    if (p.shape != g.shape) throw UsageError("case " + name + ": prediction and ground truth shapes differ");
    const MetricsReport r = evaluate_case(p, g);
    nlohmann::ordered_json c;
    c["name"] = name;
    const nlohmann::ordered_json metrics = report_to_json(r);
    for (const auto& [k, v] : metrics.items()) c[k] = v;
    cases.push_back(c);
    for (const auto& [column, member] : metric_columns()) {
      auto& acc = sums[column];
      for (std::size_t i = 0; i < 3; ++i) {
        if (const auto v = r.classes[i].*member) {
          acc[i].first += *v;
          acc[i].second += 1;
        }
      }
    }
  }
  nlohmann::ordered_json mean, count;
  for (const auto& [column, member] : metric_columns()) {
    nlohmann::ordered_json mrow, crow;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto [s, n] = sums[column][i];
      const std::string cls = to_string(kReportOrder[i]);
      mrow[cls] = n > 0 ? nlohmann::ordered_json(s / static_cast<double>(n)) : nlohmann::ordered_json(nullptr);
      crow[cls] = n;
    }
    mean[column] = mrow;
    count[column] = crow;
  }
  report["cases"] = cases;
  report["mean"] = mean;
  report["mean_counts"] = count;
  report["case_count"] = gt.size();

  if (!options.report.parent_path().empty()) fs::create_directories(options.report.parent_path());
  write_text(options.report, report.dump(2) + "\n");
  emit(log, "mean dice " + mean["dice"].dump() + ", mean hausdorff_95 " + mean["hausdorff_95"].dump());
  return report;
}

}  // namespace vaeseg
