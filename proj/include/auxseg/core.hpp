#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace auxseg {

/// Thrown when two grids that must agree in shape do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const torch::Tensor& t);
void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what);

/// One image with an optional binary mask.
///
/// `image` is a float32 H×W tensor with values in [0,1]; `mask`, when present, is a
/// float32 H×W tensor holding only 0 and 1.
struct Sample {
  std::string id;
  torch::Tensor image;
  std::optional<torch::Tensor> mask;

  int64_t height() const { return image.size(0); }
  int64_t width() const { return image.size(1); }
};

/// Checks the Sample invariants (shape agreement, [0,1] intensities, binary mask).
void validate_sample(const Sample& s);

/// An H×W float tensor with every element in [0,1]. Batched forms (B×1×H×W) are
/// accepted by the loss functions below.
using ProbabilityMap = torch::Tensor;

struct DatasetSplits {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr double kDefaultSmooth = 1.0;

/// Hard Dice 2|A∩B|/(|A|+|B|) after thresholding `pred` (pred >= threshold is
/// foreground). Both sets empty scores 1.
double dice_score(const ProbabilityMap& pred, const torch::Tensor& gt,
                  double threshold = kDefaultThreshold);

/// Unweighted mean of per-sample hard Dice over a batch of B×1×H×W (or B×H×W) maps.
double mean_dice_score(const torch::Tensor& preds, const torch::Tensor& gts,
                       double threshold = kDefaultThreshold);

/// Smooth soft Dice loss 1 − (2Σpt + s)/(Σp + Σt + s). Targets may be soft.
///
/// A single H×W map yields the loss of that map. For a batch (leading batch
/// dimension, 3 or 4 dims) the loss is computed per sample and averaged.
/// Differentiable with respect to `pred`.
torch::Tensor soft_dice_loss(const torch::Tensor& pred, const torch::Tensor& target,
                             double smooth = kDefaultSmooth);

/// Elementwise arithmetic mean of same-shaped probability maps.
ProbabilityMap ensemble_average(std::span<const ProbabilityMap> preds);

}  // namespace auxseg
