#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "auxseg/auxtask.hpp"
#include "auxseg/data.hpp"
#include "auxseg/distill.hpp"
#include "auxseg/model.hpp"
#include "auxseg/train.hpp"

namespace auxseg {

inline constexpr std::array<const char*, 4> kBaselineNames{"conventional", "joint_all", "mt_pretrain",
                                                           "ensemble"};

struct DataSection {
  /// Exactly one of the two sources is set.
  std::optional<SyntheticDataConfig> synthetic;
  std::optional<std::filesystem::path> directory;
  std::array<double, 3> split{0.6, 0.1, 0.3};
  uint64_t split_seed = 0;
};

struct TaskEntry {
  std::string name;
  Hyperparams overrides;
};

struct DistillSection {
  double lambda_kd = kDefaultLambdaKd;
  /// Student steps; the train section's `steps` when unset.
  std::optional<int64_t> steps;
  /// Student architecture preset; the teachers' when unset.
  std::optional<std::string> arch;
};

struct ExperimentConfig {
  uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/experiment";
  std::string arch_preset = "desk";
  DataSection data;
  std::vector<TaskEntry> tasks;
  TrainConfig train;
  DistillSection distill;
  std::vector<std::string> baselines;

  ArchConfig arch() const;
  std::vector<std::string> task_names() const;
  bool wants_baseline(const std::string& name) const;
  void validate() const;
};

ArchConfig arch_preset(const std::string& name);

/// Parses the YAML config text. Unknown keys are errors. Relative paths resolve
/// against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON form; output_dir is left out so relocating an experiment keeps its hash.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// 16 hex digits of FNV-1a over the canonical JSON.
std::string config_hash(const ExperimentConfig& cfg);

std::vector<Sample> load_samples(const DataSection& data);
DatasetSplits load_splits(const DataSection& data);

struct RunOptions {
  bool force = false;
  bool resume = false;
  int workers = 1;
  /// Stop cleanly once the named phase is complete (e.g. "stage1").
  std::optional<std::string> stop_after;
  std::ostream* log = nullptr;
};

/// Runs baselines, Stage 1, the ensemble baseline and Stage 2 under `cfg.output_dir`.
/// Each phase directory gets a DONE marker; with `resume`, completed phases are
/// loaded from disk instead of retrained. Returns the report (also written to
/// report.json and summary.txt). With `stop_after`, returns an empty object when stopping early.
nlohmann::json run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

/// Runs `repeats` copies with seeds seed, seed+1, ... in `<output_dir>/repeat-<r>` and
/// writes an aggregate report with mean and standard deviation per row.
nlohmann::json run_repeats(const ExperimentConfig& cfg, int repeats, const RunOptions& opts);

/// Writes the synthetic dataset of `cfg.data` in the directory format. Refuses a
/// non-empty target unless `force`.
size_t generate_dataset(const ExperimentConfig& cfg, const std::filesystem::path& target, bool force);

/// Mean hard Dice of a checkpoint on `samples`.
double evaluate_checkpoint(const std::filesystem::path& checkpoint, std::span<const Sample> samples,
                           int64_t batch_size = 32);

/// Human-readable tables (Dice as percentages, two decimals).
std::string format_report(const nlohmann::json& report);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace auxseg
