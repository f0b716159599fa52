#pragma once

#include <optional>
#include <span>

#include "auxseg/core.hpp"
#include "auxseg/model.hpp"
#include "auxseg/train.hpp"

namespace auxseg {

/// Weight the published experiments actually ran with (five teachers).
inline constexpr double kDefaultLambdaKd = 0.83;

/// 1/(N+1): each teacher's pseudo-label weighted like the ground truth, read literally.
inline double equal_weight_lambda_kd(size_t n_teachers) {
  return 1.0 / (static_cast<double>(n_teachers) + 1.0);
}

struct DistillConfig {
  double lambda_kd = kDefaultLambdaKd;
  /// Student architecture; teachers' architecture when unset.
  std::optional<ArchConfig> student_arch;
  TrainConfig train;

  void validate(size_t n_teachers) const;
};

/// Mean of the teachers' segmentation probabilities on `images` (B×1×H×W),
/// computed without gradients.
ProbabilityMap teacher_ensemble(std::span<const ModelBundle> teachers, const torch::Tensor& images);

struct StudentLoss {
  torch::Tensor total;
  torch::Tensor ground_truth;  // soft Dice vs. the mask
  torch::Tensor distillation;  // soft Dice vs. the ensemble
};

/// (1 − λ)·DiceLoss(student, mask) + λ·DiceLoss(student, ensemble).
StudentLoss student_loss(const torch::Tensor& student_pred, const torch::Tensor& gt_mask,
                         const torch::Tensor& ensemble_pred, double lambda_kd);

/// Trains a fresh student on augmented batches; teacher predictions are computed on
/// the same augmented images. Teachers stay frozen. The best-validation student is returned.
TrainResult distill_student(const DatasetSplits& splits, std::span<const ModelBundle> teachers,
                            const DistillConfig& cfg);

}  // namespace auxseg
