#pragma once

#include <vector>

#include <torch/torch.h>

namespace auxseg {

struct RAdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Rectified Adam. The adaptive step is used once the variance of the adaptive
/// learning rate is tractable (rho_t > 5); before that the update is the
/// bias-corrected momentum alone. The learning rate is passed per step so the
/// caller owns the schedule.
class RAdam {
 public:
  RAdam(std::vector<torch::Tensor> params, RAdamOptions options = {});

  void zero_grad();
  void step(double lr);

  int64_t steps_taken() const { return t_; }
  const std::vector<torch::Tensor>& params() const { return params_; }

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> exp_avg_, exp_avg_sq_;
  RAdamOptions opt_;
  int64_t t_ = 0;
};

}  // namespace auxseg
