#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "auxseg/experiment.hpp"
#include "fixtures.hpp"

using namespace auxseg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("auxseg_exp_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string with(const std::string& yaml, const std::string& extra) { return yaml + extra; }

}  // namespace

TEST(Config, ParsesTinyExperiment) {
  const auto cfg = parse_config(fixture::tiny_experiment_yaml("/tmp/x"));
  EXPECT_EQ(cfg.seed, 1u);
  EXPECT_EQ(cfg.train.seed, 1u);
  EXPECT_EQ(cfg.train.steps, 2);
  EXPECT_EQ(cfg.task_names().size(), 5u);
  EXPECT_EQ(cfg.baselines.size(), 4u);
  EXPECT_EQ(cfg.data.synthetic->count, 24);
  EXPECT_EQ(cfg.output_dir, fs::path("/tmp/x"));
  EXPECT_DOUBLE_EQ(cfg.distill.lambda_kd, 0.83);
}

TEST(Config, TaskOverridesAndWeights) {
  const auto cfg = parse_config(
      "data: {synthetic: {count: 10}}\n"
      "tasks:\n  - sdm_in\n  - rkb: {rows: 2, cols: 2}\n  - moco: {temperature: 0.1}\n"
      "train: {aux_weights: {sdm_in: 0.5}}\n"
      "baselines: [conventional]\n");
  ASSERT_EQ(cfg.tasks.size(), 3u);
  EXPECT_DOUBLE_EQ(cfg.tasks[2].overrides.at("temperature"), 0.1);
  EXPECT_DOUBLE_EQ(cfg.train.aux_weight("sdm_in"), 0.5);
  EXPECT_TRUE(cfg.wants_baseline("conventional"));
  EXPECT_FALSE(cfg.wants_baseline("ensemble"));
}

TEST(Config, RejectsTyposAndUnknownNames) {
  const auto base = fixture::tiny_experiment_yaml("/tmp/x");
  EXPECT_THROW(parse_config(with(base, "sed: 3\n")), std::invalid_argument);
  EXPECT_THROW(parse_config("data: {synthetic: {count: 10}}\ntasks: [sdm_in]\ntrain: {step: 5}\n"),
               std::invalid_argument);
  EXPECT_THROW(parse_config("data: {synthetic: {count: 10}}\ntasks: [rotation]\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("data: {synthetic: {count: 10}}\ntasks: [moco: {temprature: 1}]\n"),
               std::invalid_argument);
  EXPECT_THROW(parse_config("data: {synthetic: {count: 10}}\ntasks: [sdm_in]\nbaselines: [gcs]\n"),
               std::invalid_argument);
  EXPECT_THROW(parse_config("data: {synthetic: {count: 10}, directory: d}\ntasks: [sdm_in]\n"),
               std::invalid_argument);
  EXPECT_THROW(parse_config("tasks: [sdm_in]\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("data: {synthetic: {count: 10}}\ntasks: [sdm_in]\narch: huge\n"),
               std::invalid_argument);
  EXPECT_THROW(parse_config("data: [\n"), std::invalid_argument);
}

TEST(Config, HashIgnoresLocationButNotContent) {
  const auto a = parse_config(fixture::tiny_experiment_yaml("/tmp/a"));
  const auto b = parse_config(fixture::tiny_experiment_yaml("/tmp/b"));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  auto c = a;
  c.train.steps = 3;
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Config, RepoConfigsLoad) {
  for (const char* name : {"desk.yaml", "acceptance.yaml"}) {
    const auto cfg = load_config(fs::path(AUXSEG_SOURCE_DIR) / "configs" / name);
    const auto splits = load_splits(cfg.data);
    EXPECT_EQ(splits.train.size(), 200u) << name;
    EXPECT_EQ(splits.val.size(), 40u) << name;
    EXPECT_EQ(splits.test.size(), 100u) << name;
  }
}

TEST(Generate, WritesRefusesAndRegeneratesIdentically) {
  const auto dir = fresh_dir("generate");
  auto cfg = parse_config("data: {synthetic: {count: 10, seed: 3}}\ntasks: [sdm_in]\n");
  EXPECT_EQ(generate_dataset(cfg, dir, false), 10u);
  EXPECT_EQ(load_directory(dir).size(), 10u);
  const auto first = slurp(dir / "images" / "syn_00004.png");
  EXPECT_THROW(generate_dataset(cfg, dir, false), std::runtime_error);
  EXPECT_EQ(generate_dataset(cfg, dir, true), 10u);
  EXPECT_EQ(slurp(dir / "images" / "syn_00004.png"), first);
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fresh_dir("pipeline");
    cfg_ = new ExperimentConfig(parse_config(fixture::tiny_experiment_yaml(dir_.string())));
    report_ = new nlohmann::json(run_experiment(*cfg_, RunOptions{}));
  }
  static void TearDownTestSuite() {
    delete cfg_;
    delete report_;
  }
  static inline fs::path dir_;
  static inline ExperimentConfig* cfg_ = nullptr;
  static inline nlohmann::json* report_ = nullptr;
};

TEST_F(Pipeline, ReportShape) {
  const auto& r = *report_;
  ASSERT_EQ(r.at("stage1").size(), 5u);
  for (const auto& row : r["stage1"]) {
    const double j = row.at("val_dice_joint"), p = row.at("val_dice_pretrain");
    EXPECT_EQ(row.at("chosen_mode"), to_string(select_mode(j, p)));
    for (const char* k : {"val_dice_joint", "val_dice_pretrain", "test_dice"}) {
      EXPECT_GE(row.at(k).get<double>(), 0.0);
      EXPECT_LE(row.at(k).get<double>(), 1.0);
    }
  }
  for (const char* b : kBaselineNames) EXPECT_TRUE(r.at("baselines").contains(b)) << b;
  EXPECT_TRUE(r.at("student").contains("test_dice"));
  EXPECT_EQ(r.at("config_hash"), read_json(dir_ / "config.json").at("hash"));
  EXPECT_EQ(r.at("config_hash"), config_hash(*cfg_));
  for (const char* phase : {"baselines/conventional", "stage1/rkb/joint", "stage1/rkb/pretrain", "stage2/student"}) {
    EXPECT_TRUE(fs::exists(dir_ / phase / "DONE")) << phase;
    EXPECT_TRUE(fs::exists(dir_ / phase / "best.ckpt")) << phase;
    EXPECT_TRUE(fs::exists(dir_ / phase / "history.jsonl")) << phase;
  }
  EXPECT_TRUE(fs::exists(dir_ / "summary.txt"));
  EXPECT_NE(format_report(r).find("ours (student)"), std::string::npos);
}

TEST_F(Pipeline, CompletedExperimentIsNotOverwritten) {
  EXPECT_THROW(run_experiment(*cfg_, RunOptions{}), std::runtime_error);
  RunOptions resume;
  resume.resume = true;
  EXPECT_TRUE(fixture::dice_differences(run_experiment(*cfg_, resume), *report_).empty());
}

TEST_F(Pipeline, EvalReproducesReportedStudentDice) {
  const auto splits = load_splits(cfg_->data);
  const auto ckpt = dir_ / "stage2" / "student" / "best.ckpt";
  const double a = evaluate_checkpoint(ckpt, splits.test, cfg_->train.eval_batch_size);
  const double b = evaluate_checkpoint(ckpt, splits.test, cfg_->train.eval_batch_size);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, report_->at("student").at("test_dice").get<double>());
  EXPECT_THROW(evaluate_checkpoint(dir_ / "missing.ckpt", splits.test), CheckpointError);
}

TEST_F(Pipeline, EvalRejectsIncompatibleData) {
  SyntheticDataConfig odd;
  odd.count = 2;
  odd.height = 40;
  odd.width = 40;
  EXPECT_THROW(evaluate_checkpoint(dir_ / "stage2" / "student" / "best.ckpt", generate_synthetic(odd)),
               std::invalid_argument);
}

TEST_F(Pipeline, ResumeAfterStageOneEqualsUninterruptedRun) {
  const auto dir = fresh_dir("resume");
  auto cfg = *cfg_;
  cfg.output_dir = dir;
  RunOptions stop;
  stop.stop_after = "stage1";
  EXPECT_TRUE(run_experiment(cfg, stop).empty());
  EXPECT_FALSE(fs::exists(dir / "report.json"));
  EXPECT_FALSE(fs::exists(dir / "stage2"));
  const auto ckpt = dir / "stage1" / "moco" / "joint" / "best.ckpt";
  const auto bytes = slurp(ckpt);
  const auto mtime = fs::last_write_time(ckpt);

  EXPECT_THROW(run_experiment(cfg, RunOptions{}), std::runtime_error);  // partial results need --resume
  RunOptions resume;
  resume.resume = true;
  const auto report = run_experiment(cfg, resume);
  EXPECT_EQ(fs::last_write_time(ckpt), mtime);
  EXPECT_EQ(slurp(ckpt), bytes);
  const auto diff = fixture::dice_differences(report, *report_);
  EXPECT_TRUE(diff.empty()) << diff.front();
}

TEST_F(Pipeline, ResumeWithChangedConfigRefused) {
  const auto dir = fresh_dir("changed");
  auto cfg = *cfg_;
  cfg.output_dir = dir;
  RunOptions stop;
  stop.stop_after = "baselines";
  run_experiment(cfg, stop);
  cfg.train.steps = 3;
  RunOptions resume;
  resume.resume = true;
  EXPECT_THROW(run_experiment(cfg, resume), std::runtime_error);
  RunOptions force;
  force.force = true;
  stop.force = true;
  EXPECT_NO_THROW(run_experiment(cfg, stop));
}
