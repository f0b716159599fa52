#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "auxseg/core.hpp"
#include "auxseg/data.hpp"
#include "auxseg/model.hpp"
#include "auxseg/rng.hpp"

namespace auxseg {

// ---------------------------------------------------------------------------
// Surface distance maps

enum class SdmDirection { In, Out };

/// Raised when the opposite class the distance is measured to does not exist.
class UndefinedDistance : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Exact Euclidean distance map of a binary H×W mask, in pixels.
///
/// In: each foreground pixel holds the distance to its nearest background pixel;
/// background is 0. Out: each background pixel holds the distance to its nearest
/// foreground pixel; foreground is 0. An all-background mask with In (or
/// all-foreground with Out) gives all zeros. An all-foreground mask with In (or
/// all-background with Out) throws UndefinedDistance.
torch::Tensor sdm(const torch::Tensor& mask, SdmDirection direction);

/// Divides by the map maximum when it is nonzero; targets land in [0,1].
torch::Tensor normalize_sdm(const torch::Tensor& map);

/// Mean squared error over all elements.
torch::Tensor sdm_loss(const torch::Tensor& pred, const torch::Tensor& target);

// ---------------------------------------------------------------------------
// Patch-permutation (Rubik's cube) task

using Permutation = std::vector<int64_t>;

/// `k` distinct permutations of rows·cols patch indices, identity first. The rest
/// are drawn by a seeded shuffle of the full lexicographic enumeration when
/// (rows·cols)! is small, otherwise by rejection sampling.
std::vector<Permutation> rkb_permutations(int64_t rows, int64_t cols, int64_t k, uint64_t seed);

Permutation invert(const Permutation& p);

struct PatchExample {
  torch::Tensor patches;  // P×h×w, position j holds source patch perm[j]
  int64_t label = 0;
};

/// Splits `image` (center-cropped to a multiple of the grid) into raster-order
/// patches and reorders them by perms[perm_index].
PatchExample rkb_make_example(const torch::Tensor& image, int64_t rows, int64_t cols,
                              int64_t perm_index, std::span<const Permutation> perms);

/// Raster-order partition of an image into rows×cols patches (P×h×w).
torch::Tensor partition_patches(const torch::Tensor& image, int64_t rows, int64_t cols);

/// Reorders a P×h×w stack so that position j holds stack[perm[j]].
torch::Tensor permute_patches(const torch::Tensor& stack, const Permutation& perm);

// ---------------------------------------------------------------------------
// Two-view augmentation for the contrastive tasks

struct ViewConfig {
  int64_t crop_size = 32;
  /// Side of the sampled crop relative to `crop_size`; resized back to crop_size.
  std::array<double, 2> scale{0.75, 1.5};
  /// When false the crop is the centered crop_size window (no position or scale jitter).
  bool crop_jitter = true;
  AugmentationConfig intensity = AugmentationConfig::disabled();
};

/// Two independently sampled crop-resize + intensity-jitter views of `image`.
std::pair<torch::Tensor, torch::Tensor> two_view_augment(const torch::Tensor& image,
                                                         const ViewConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Contrastive objectives

/// In-batch InfoNCE on L2-normalized embeddings with positives on the diagonal,
/// averaged over the (q→k) and (k→q) directions. Keys are detached.
torch::Tensor moco_loss(const torch::Tensor& queries, const torch::Tensor& keys,
                        double temperature);

struct VicregCoeffs {
  double variance = 25.0;
  double invariance = 25.0;
  double covariance = 1.0;
  double gamma = 1.0;
  double eps = 1e-4;
};

struct VicregTerms {
  torch::Tensor total;
  torch::Tensor invariance;  // mean squared difference over all elements
  torch::Tensor variance;    // mean hinge on per-dimension std, averaged over branches
  torch::Tensor covariance;  // Σ off-diagonal cov² / d, summed over branches
};

VicregTerms vicreg_loss(const torch::Tensor& za, const torch::Tensor& zb,
                        const VicregCoeffs& coeffs = {});

// ---------------------------------------------------------------------------
// Pluggable task interface

using Hyperparams = std::map<std::string, double>;

/// One step's worth of task inputs. Layout is task specific.
struct AuxBatch {
  std::vector<torch::Tensor> inputs;
  torch::Tensor target;
  size_t skipped = 0;
};

/// Raised when every sample of an auxiliary batch is unusable.
class DegenerateBatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AuxTask {
 public:
  AuxTask(std::string name, Hyperparams defaults, const Hyperparams& overrides);
  virtual ~AuxTask() = default;

  const std::string& name() const { return name_; }
  const Hyperparams& hyperparams() const { return params_; }
  double param(const std::string& key) const;

  virtual HeadKind head_kind() const = 0;
  virtual HeadSpec head_spec() const = 0;
  /// Builds one auxiliary batch from raw (unaugmented) training samples.
  virtual AuxBatch make_batch(std::span<const Sample> samples, Rng& rng) const = 0;
  /// Scalar task loss; gradients reach the trunk and this task's head.
  virtual torch::Tensor loss(ModelBundle& model, const AuxBatch& batch) = 0;
  /// Hook after every optimizer step.
  virtual void after_step(ModelBundle& /*model*/) {}

 private:
  std::string name_;
  Hyperparams params_;
};

struct TaskContext {
  AugmentationConfig augmentation;
  /// Crops fed to the model must be multiples of this.
  int64_t stride = 16;
};

inline constexpr std::array<const char*, 5> kTaskNames{"sdm_in", "sdm_out", "rkb", "moco",
                                                       "vicreg"};

bool is_registered_task(const std::string& name);
/// Default hyperparameters of a registered task.
Hyperparams task_defaults(const std::string& name);
/// Fresh task instance; each training job owns its own (MoCo keeps momentum state).
std::unique_ptr<AuxTask> make_task(const std::string& name, const TaskContext& ctx,
                                   const Hyperparams& overrides = {});

using TaskList = std::vector<std::unique_ptr<AuxTask>>;

}  // namespace auxseg
