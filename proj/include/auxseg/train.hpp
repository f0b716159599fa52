#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "auxseg/auxtask.hpp"
#include "auxseg/core.hpp"
#include "auxseg/data.hpp"
#include "auxseg/model.hpp"
#include "auxseg/radam.hpp"

namespace auxseg {

struct TrainConfig {
  int64_t batch_size = 16;
  double lr0 = 1e-3;
  double power = 0.9;
  /// Steps for conventional, joint, fine-tune and student runs.
  int64_t steps = 2000;
  /// Steps for the auxiliary-only pre-training phase.
  int64_t pretrain_steps = 1000;
  int64_t val_every = 100;
  int64_t eval_batch_size = 32;
  RAdamOptions optimizer;
  /// Joint-loss weight per auxiliary task; tasks not listed use `default_aux_weight`.
  std::map<std::string, double> aux_weights;
  double default_aux_weight = 1.0;
  uint64_t seed = 0;
  AugmentationConfig augmentation;
  /// Record parameter checksums after every step (trajectory comparisons).
  bool trace_parameters = false;

  double aux_weight(const std::string& task) const;
  void validate() const;
};

/// Poly schedule lr0·(1 − step/total)^power for 0 ≤ step ≤ total.
double lr_at(int64_t step, int64_t total, double lr0, double power);

struct HistoryEntry {
  std::string phase;
  int64_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_seg = 0.0;
  /// Unweighted sum of auxiliary task losses (distillation: the pseudo-label term).
  double loss_aux = 0.0;
  std::optional<double> val_dice;
  /// Set when TrainConfig::trace_parameters is on.
  std::optional<uint64_t> trunk_checksum;
  std::optional<uint64_t> seg_head_checksum;
};

void to_json(nlohmann::json& j, const HistoryEntry& e);
void from_json(const nlohmann::json& j, HistoryEntry& e);
void write_history(const std::filesystem::path& path, std::span<const HistoryEntry> history);
std::vector<HistoryEntry> read_history(const std::filesystem::path& path);

struct TrainResult {
  ModelBundle model{nullptr};
  /// Best validation Dice over all validation events (−1 when the phase never validates).
  double best_val = -1.0;
  int64_t best_step = -1;
  uint64_t initial_trunk_checksum = 0;
  std::vector<HistoryEntry> history;
};

/// Segmentation probabilities for every sample (N×1×H×W), no augmentation.
torch::Tensor predict(ModelBundle& model, std::span<const Sample> samples, int64_t batch_size = 32);

/// Mean per-sample hard Dice at threshold 0.5.
double validate(ModelBundle& model, std::span<const Sample> val, int64_t batch_size = 32);

/// Augmented segmentation batches in epoch-shuffled order. The stream depends only
/// on the seed, so runs that share a seed see identical segmentation batches.
class SegBatchStream {
 public:
  SegBatchStream(std::span<const Sample> train, const AugmentationConfig& aug, uint64_t seed);
  struct Batch {
    torch::Tensor images;  // B×1×H×W
    torch::Tensor masks;   // B×1×H×W
  };
  Batch next(int64_t batch_size);

 private:
  std::span<const Sample> train_;
  AugmentationConfig aug_;
  BatchSampler sampler_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Generic optimisation phase

struct StepLosses {
  torch::Tensor total;
  double seg = 0.0;
  double aux = 0.0;
};

struct PhaseSpec {
  std::string name;
  int64_t steps = 0;
  double lr0 = 1e-3;
  double power = 0.9;
  RAdamOptions optimizer;
  std::vector<torch::Tensor> params;
  /// Segmentation validation set; empty disables validation and best-val retention.
  std::span<const Sample> val;
  int64_t val_every = 100;
  int64_t eval_batch_size = 32;
  bool trace_parameters = false;
  std::function<void()> after_step;
};

/// Runs `steps` RAdam updates on `spec.params` using the poly schedule. With a
/// validation set, the parameters with the best validation Dice are restored at the end.
TrainResult run_phase(ModelBundle& model, const PhaseSpec& spec,
                      const std::function<StepLosses(int64_t)>& step_loss);

// ---------------------------------------------------------------------------
// Stage 1

/// Seed of the model built for conventional / joint / pre-training runs.
uint64_t model_seed(const TrainConfig& cfg);

TrainResult train_conventional(const DatasetSplits& splits, const ArchConfig& arch,
                               const TrainConfig& cfg);

/// Joint objective L_seg + Σ λ_i L_i; one segmentation batch and one batch per
/// auxiliary task each step; all parameters updated together.
TrainResult train_joint(const DatasetSplits& splits, TaskList& tasks, const ArchConfig& arch,
                        const TrainConfig& cfg);

/// Auxiliary-only optimisation of trunk + auxiliary heads (Σ λ_i L_i when several tasks
/// are given). Returns the final model; no validation.
TrainResult pretrain_auxiliary(const DatasetSplits& splits, TaskList& tasks, const ArchConfig& arch,
                               const TrainConfig& cfg);

/// Fresh segmentation bundle whose trunk is copied from `pretrained`, then trained on Dice.
TrainResult finetune(const DatasetSplits& splits, const ModelBundle& pretrained, const TrainConfig& cfg);

/// pretrain_auxiliary followed by finetune; history holds both phases.
TrainResult pretrain_then_finetune(const DatasetSplits& splits, TaskList& tasks,
                                   const ArchConfig& arch, const TrainConfig& cfg);

enum class TrainingMode { Joint, Pretrain };
std::string to_string(TrainingMode m);
TrainingMode training_mode_from_string(const std::string& s);

/// Higher validation Dice wins; ties go to joint training.
TrainingMode select_mode(double val_dice_joint, double val_dice_pretrain);

struct ModeRun {
  ModelBundle model{nullptr};
  double val_dice = 0.0;
  std::vector<HistoryEntry> history;
};

struct StageOneResult {
  std::string task_name;
  TrainingMode chosen_mode = TrainingMode::Joint;
  ModelBundle model{nullptr};
  double val_dice_joint = 0.0;
  double val_dice_pretrain = 0.0;
  std::vector<HistoryEntry> history_joint;
  std::vector<HistoryEntry> history_pretrain;

  double chosen_val_dice() const {
    return chosen_mode == TrainingMode::Joint ? val_dice_joint : val_dice_pretrain;
  }
};

/// Trains one (task, mode) job. Must not share mutable state with other jobs.
using ModeTrainer = std::function<ModeRun(const std::string& task, TrainingMode mode)>;

using TaskFactory = std::function<std::unique_ptr<AuxTask>(const std::string& name)>;

/// Runs both modes for every task (up to `workers` jobs at once) and selects per task.
/// A failing job aborts with the task and mode named.
std::vector<StageOneResult> run_stage1(std::span<const std::string> tasks, const ModeTrainer& trainer,
                                       int workers = 1);

/// Real joint / pre-train trainer over the given data.
ModeTrainer make_mode_trainer(const DatasetSplits& splits, const ArchConfig& arch,
                              const TrainConfig& cfg, TaskFactory factory);

std::vector<StageOneResult> run_stage1(const DatasetSplits& splits, std::span<const std::string> tasks,
                                       const ArchConfig& arch, const TrainConfig& cfg,
                                       TaskFactory factory, int workers = 1);

}  // namespace auxseg
