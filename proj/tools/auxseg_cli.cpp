#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "auxseg/experiment.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Two-stage auxiliary-task training for binary segmentation"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  bool resume = false;
  int workers = 1;
  int repeats = 1;

  auto* gen = app.add_subcommand("generate", "Write the configured synthetic dataset to disk");
  std::string gen_out;
  gen->add_option("--config", config_path, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Target directory (default: <output_dir>/data)");
  gen->add_flag("--force", force, "Overwrite a non-empty target");

  auto* run = app.add_subcommand("run", "Run baselines, Stage 1 and Stage 2");
  run->add_option("--config", config_path, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
  run->add_flag("--force", force, "Discard existing results and start over");
  run->add_flag("--resume", resume, "Skip phases that already carry a DONE marker");
  run->add_option("--workers", workers, "Concurrent Stage-1 jobs")->check(CLI::PositiveNumber);
  run->add_option("--repeats", repeats, "Independent repeats with consecutive seeds")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Mean Dice of a checkpoint");
  std::string checkpoint, data_dir, which = "test";
  int64_t batch_size = 32;
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  auto* eval_cfg = eval->add_option("--config", config_path, "Config whose data and split to use");
  auto* eval_data = eval->add_option("--data", data_dir, "Dataset directory, evaluated as a whole");
  eval_cfg->excludes(eval_data);
  eval->add_option("--split", which, "Split to score with --config")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--batch-size", batch_size, "Evaluation batch size")->check(CLI::PositiveNumber);

  auto* rep = app.add_subcommand("report", "Pretty-print a stored report");
  std::string report_path;
  rep->add_option("path", report_path, "report.json or an experiment directory");
  rep->add_option("--config", config_path, "Config whose output_dir holds the report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = auxseg::load_config(config_path);
      const fs::path target = gen_out.empty() ? cfg.output_dir / "data" : fs::path(gen_out);
      const auto n = auxseg::generate_dataset(cfg, target, force);
      std::cout << "wrote " << n << " image/mask pairs to " << target.string() << "\n";
    } else if (*run) {
      if (force && resume) throw std::invalid_argument("--force and --resume are mutually exclusive");
      const auto cfg = auxseg::load_config(config_path);
      auxseg::RunOptions opts;
      opts.force = force;
      opts.resume = resume;
      opts.workers = workers;
      opts.log = &std::cerr;
      const auto report = auxseg::run_repeats(cfg, repeats, opts);
      if (repeats == 1) {
        std::cout << auxseg::format_report(report);
      } else {
        std::cout << report.at("test_dice").dump(2) << "\n";
      }
    } else if (*eval) {
      std::vector<auxseg::Sample> samples;
      if (!data_dir.empty()) {
        samples = auxseg::load_directory(data_dir);
      } else if (!config_path.empty()) {
        const auto cfg = auxseg::load_config(config_path);
        auto splits = auxseg::load_splits(cfg.data);
        samples = which == "train" ? splits.train : which == "val" ? splits.val : splits.test;
        if (!eval->count("--batch-size")) batch_size = cfg.train.eval_batch_size;
      } else {
        throw std::invalid_argument("eval needs --config or --data");
      }
      if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint);
      const double dice = auxseg::evaluate_checkpoint(checkpoint, samples, batch_size);
      std::printf("%.17g\n", dice);
    } else if (*rep) {
      fs::path p = report_path;
      if (p.empty()) {
        if (config_path.empty()) throw std::invalid_argument("report needs a path or --config");
        p = auxseg::load_config(config_path).output_dir;
      }
      if (fs::is_directory(p)) p /= "report.json";
      std::cout << auxseg::format_report(auxseg::read_json(p));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
