#include <cstdlib>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vaeseg/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

void log_line(const std::string& msg) { spdlog::info("{}", msg); }

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("vaeseg"));
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");

  CLI::App app{"3D tumor segmentation with a VAE-regularized encoder"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  vaeseg::GenDataOptions gen;
  std::string difficulty = "low";
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic phantom cases");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of cases")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Edge length in voxels (multiple of 8)")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--difficulty", difficulty, "low, medium or high")
      ->check(CLI::IsMember({"low", "medium", "high"}))
      ->capture_default_str();

  std::string config_path;
  vaeseg::TrainRunOptions train;
  std::string resume;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", config_path, "JSON config with dotted keys")->required();
  train_cmd->add_option("--out", train.out_dir, "Checkpoint and log directory")->required();
  train_cmd->add_option("--resume", resume, "Continue from this checkpoint");

  vaeseg::InferOptions infer;
  std::vector<std::string> ckpts;
  auto* infer_cmd = app.add_subcommand("infer", "Segment one volume");
  infer_cmd->add_option("--ckpt", ckpts, "One or more checkpoints (ensembled)")->required();
  infer_cmd->add_option("--in", infer.input, "Input image RVOL")->required();
  infer_cmd->add_option("--out", infer.output, "Output label RVOL")->required();
  infer_cmd->add_flag("--tta", infer.tta, "Average over the 8 axis mirrors");
  infer_cmd->add_option("--threshold", infer.threshold, "Decode threshold")->capture_default_str();

  vaeseg::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted labels against ground truth");
  eval_cmd->add_option("--pred", eval.pred_dir, "Directory of predicted *.lbl.rvol")->required();
  eval_cmd->add_option("--gt", eval.gt_dir, "Directory of reference *.lbl.rvol")->required();
  eval_cmd->add_option("--report", eval.report, "JSON report path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    if (gen_cmd->parsed()) {
      gen.difficulty = vaeseg::parse_difficulty(difficulty);
      vaeseg::run_gen_data(gen, log_line);
    } else if (train_cmd->parsed()) {
      train.config = vaeseg::load_run_config(config_path);
      if (!resume.empty()) train.resume = resume;
      vaeseg::run_train(train, log_line);
    } else if (infer_cmd->parsed()) {
      infer.checkpoints.assign(ckpts.begin(), ckpts.end());
      vaeseg::run_infer(infer, log_line);
    } else if (eval_cmd->parsed()) {
      vaeseg::run_eval(eval, log_line);
    }
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kValidation;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
  return kOk;
}
