#include "auxseg/distill.hpp"

namespace auxseg {

void DistillConfig::validate(size_t n_teachers) const {
  if (n_teachers == 0) throw std::invalid_argument("distill: teacher list is empty");
  if (!(lambda_kd >= 0.0 && lambda_kd <= 1.0)) throw std::invalid_argument("distill: lambda_kd outside [0,1]");
  train.validate();
}

ProbabilityMap teacher_ensemble(std::span<const ModelBundle> teachers, const torch::Tensor& images) {
  if (teachers.empty()) throw std::invalid_argument("teacher_ensemble: empty teacher list");
  torch::NoGradGuard no_grad;
  std::vector<ProbabilityMap> preds;
  preds.reserve(teachers.size());
  for (ModelBundle t : teachers) preds.push_back(t->segment(images));
  return ensemble_average(preds);
}

StudentLoss student_loss(const torch::Tensor& student_pred, const torch::Tensor& gt_mask,
                         const torch::Tensor& ensemble_pred, double lambda_kd) {
  if (!(lambda_kd >= 0.0 && lambda_kd <= 1.0)) throw std::invalid_argument("student_loss: lambda_kd outside [0,1]");
  require_same_shape(student_pred, gt_mask, "student_loss");
  require_same_shape(student_pred, ensemble_pred, "student_loss");
  StudentLoss l;
  l.ground_truth = soft_dice_loss(student_pred, gt_mask);
  l.distillation = soft_dice_loss(student_pred, ensemble_pred.detach());
  l.total = (1.0 - lambda_kd) * l.ground_truth + lambda_kd * l.distillation;
  return l;
}

TrainResult distill_student(const DatasetSplits& splits, std::span<const ModelBundle> teachers,
                            const DistillConfig& cfg) {
  cfg.validate(teachers.size());
  if (splits.train.empty() || splits.val.empty()) throw std::invalid_argument("distill: empty split");
  const auto arch = cfg.student_arch.value_or(teachers.front()->arch());

  const auto probe = stack_images(std::span<const Sample>(splits.train).first(1));
  for (size_t i = 0; i < teachers.size(); ++i) {
    try {
      teachers[i]->check_input(probe);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("distill: teacher " + std::to_string(i) + " rejects the student's input: " + e.what());
    }
  }

  auto student = build_model(arch, {}, model_seed(cfg.train));
  student->check_input(probe);
  SegBatchStream seg(splits.train, cfg.train.augmentation, cfg.train.seed);

  PhaseSpec spec;
  spec.name = "distill";
  spec.steps = cfg.train.steps;
  spec.lr0 = cfg.train.lr0;
  spec.power = cfg.train.power;
  spec.optimizer = cfg.train.optimizer;
  spec.val = splits.val;
  spec.val_every = cfg.train.val_every;
  spec.eval_batch_size = cfg.train.eval_batch_size;
  spec.trace_parameters = cfg.train.trace_parameters;
  spec.params = student->shared_parameters();
  const auto head = student->head_parameters(kSegHead);
  spec.params.insert(spec.params.end(), head.begin(), head.end());

  return run_phase(student, spec, [&](int64_t) {
    const auto b = seg.next(cfg.train.batch_size);
    const auto ensemble = teacher_ensemble(teachers, b.images);
    auto l = student_loss(student->segment(b.images), b.masks, ensemble, cfg.lambda_kd);
    return StepLosses{l.total, l.ground_truth.item<double>(), l.distillation.item<double>()};
  });
}

}  // namespace auxseg
