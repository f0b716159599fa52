#include <cmath>

#include "auxseg/radam.hpp"

namespace auxseg {

RAdam::RAdam(std::vector<torch::Tensor> params, RAdamOptions options)
    : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    exp_avg_.push_back(torch::zeros_like(p));
    exp_avg_sq_.push_back(torch::zeros_like(p));
  }
}

void RAdam::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) {
      p.mutable_grad().detach_();
      p.mutable_grad().zero_();
    }
  }
}

void RAdam::step(double lr) {
  torch::NoGradGuard no_grad;
  ++t_;
  const double b1 = opt_.beta1, b2 = opt_.beta2;
  const double t = static_cast<double>(t_);
  const double bias1 = 1.0 - std::pow(b1, t);
  const double b2t = std::pow(b2, t);
  const double bias2 = 1.0 - b2t;
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * b2t / bias2;
  const bool rectify = rho_t > 5.0;
  const double rect = rectify ? std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                                          ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                              : 0.0;

  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.grad().defined()) continue;
    auto g = p.grad();
    if (opt_.weight_decay != 0.0) g = g.add(p, opt_.weight_decay);
    exp_avg_[i].mul_(b1).add_(g, 1.0 - b1);
    exp_avg_sq_[i].mul_(b2).addcmul_(g, g, 1.0 - b2);
    const auto m_hat = exp_avg_[i] / bias1;
    if (rectify) {
      const auto denom = exp_avg_sq_[i].sqrt().add_(opt_.eps);
      p.sub_(m_hat / denom * (lr * rect * std::sqrt(bias2)));
    } else {
      p.sub_(m_hat * lr);
    }
  }
}

}  // namespace auxseg
