#include "auxseg/core.hpp"

#include <sstream>

namespace auxseg {

std::string shape_string(const torch::Tensor& t) {
  std::ostringstream os;
  os << '[';
  for (int64_t i = 0; i < t.dim(); ++i) os << (i ? "x" : "") << t.size(i);
  os << ']';
  return os.str();
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

void validate_sample(const Sample& s) {
  if (!s.image.defined() || s.image.dim() != 2) {
    throw std::invalid_argument("sample '" + s.id + "': image must be a 2D grid");
  }
  const auto lo = s.image.min().item<double>();
  const auto hi = s.image.max().item<double>();
  if (lo < 0.0 || hi > 1.0) {
    throw std::invalid_argument("sample '" + s.id + "': intensities outside [0,1]");
  }
  if (s.mask) {
    require_same_shape(s.image, *s.mask, ("sample '" + s.id + "'").c_str());
    const auto non_binary = (*s.mask != 0).logical_and(*s.mask != 1).any().item<bool>();
    if (non_binary) throw std::invalid_argument("sample '" + s.id + "': mask is not binary");
  }
}

double dice_score(const ProbabilityMap& pred, const torch::Tensor& gt, double threshold) {
  require_same_shape(pred, gt, "dice_score");
  const auto a = pred.ge(threshold);
  const auto b = gt.gt(0.5);
  const auto inter = a.logical_and(b).sum().item<int64_t>();
  const auto total = a.sum().item<int64_t>() + b.sum().item<int64_t>();
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double mean_dice_score(const torch::Tensor& preds, const torch::Tensor& gts, double threshold) {
  require_same_shape(preds, gts, "mean_dice_score");
  const int64_t n = preds.size(0);
  if (n == 0) throw std::invalid_argument("mean_dice_score: empty batch");
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) sum += dice_score(preds[i], gts[i], threshold);
  return sum / static_cast<double>(n);
}

torch::Tensor soft_dice_loss(const torch::Tensor& pred, const torch::Tensor& target,
                             double smooth) {
  require_same_shape(pred, target, "soft_dice_loss");
  if (!(smooth > 0.0)) throw std::invalid_argument("soft_dice_loss: smooth must be > 0");
  if (pred.dim() <= 2) {
    const auto inter = (pred * target).sum();
    return 1.0 - (2.0 * inter + smooth) / (pred.sum() + target.sum() + smooth);
  }
  const auto p = pred.flatten(1);
  const auto t = target.flatten(1);
  const auto inter = (p * t).sum(1);
  const auto per_sample = 1.0 - (2.0 * inter + smooth) / (p.sum(1) + t.sum(1) + smooth);
  return per_sample.mean();
}

ProbabilityMap ensemble_average(std::span<const ProbabilityMap> preds) {
  if (preds.empty()) throw std::invalid_argument("ensemble_average: empty prediction list");
  auto acc = preds.front().to(torch::kFloat64).clone();
  for (size_t i = 1; i < preds.size(); ++i) {
    require_same_shape(preds.front(), preds[i], "ensemble_average");
    acc.add_(preds[i].to(torch::kFloat64));
  }
  acc.div_(static_cast<double>(preds.size()));
  return acc.to(preds.front().scalar_type()).clamp_(0.0, 1.0);
}

}  // namespace auxseg
