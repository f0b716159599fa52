#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "auxseg/core.hpp"
#include "auxseg/rng.hpp"

namespace auxseg {

struct SyntheticDataConfig {
  int64_t count = 340;
  int64_t height = 64;
  int64_t width = 64;
  int64_t min_shapes = 1;
  int64_t max_shapes = 3;
  double noise_std = 0.05;
  /// Shape intensity is drawn from [min_intensity, max_intensity]; the background
  /// texture occupies [0.1, 0.45].
  double min_intensity = 0.55;
  double max_intensity = 0.95;
  uint64_t seed = 7;
};

/// Filled ellipses over a value-noise background plus Gaussian noise. Every mask
/// has a foreground fraction strictly inside (0, 0.5); draws violating that are
/// rejected and resampled. Deterministic in `cfg.seed`.
std::vector<Sample> generate_synthetic(const SyntheticDataConfig& cfg);

/// Loads `<root>/images/<id>.png` + `<root>/masks/<id>.png` (8- or 16-bit grayscale),
/// sorted by id. Images scale to [0,1]; nonzero mask pixels become 1.
std::vector<Sample> load_directory(const std::filesystem::path& root);

/// Writes samples in the directory format as 8-bit PNG (16-bit with `sixteen_bit`).
void save_directory(std::span<const Sample> samples, const std::filesystem::path& root,
                    bool sixteen_bit = false);

/// Deterministic shuffle-and-partition. Val and test sizes are round(n·fraction);
/// train takes the remainder.
DatasetSplits split(std::span<const Sample> samples, std::array<double, 3> fractions,
                    uint64_t seed);

struct AugmentationConfig {
  double translate_fraction = 0.1;   // ± fraction of H/W
  std::array<double, 2> zoom{0.9, 1.1};
  std::array<double, 2> rotation{-15.0, 15.0};  // degrees
  std::array<double, 2> noise_std{0.0, 0.05};
  std::array<double, 2> blur_sigma{0.5, 1.0};
  std::array<double, 2> brightness{0.75, 1.25};
  std::array<double, 2> contrast{0.75, 1.25};
  std::array<double, 2> gamma{0.7, 1.5};

  double p_translate = 0.5;
  double p_zoom = 0.3;
  double p_rotate = 0.3;
  double p_noise = 0.15;
  double p_blur = 0.2;
  double p_brightness = 0.15;
  double p_contrast = 0.15;
  double p_gamma = 0.3;

  /// Every probability set to zero.
  static AugmentationConfig disabled();
  /// Throws unless ranges are finite and probabilities lie in [0,1].
  void validate() const;
};

/// Applies the configured spatial ops (image: bilinear, mask: nearest, reflect
/// padding) followed by intensity ops on the image only. Output image is clipped
/// to [0,1]; H×W never changes.
Sample augment(const Sample& sample, const AugmentationConfig& cfg, Rng& rng);

/// Intensity-only part of `augment` (noise, blur, brightness, contrast, gamma).
torch::Tensor augment_intensity(const torch::Tensor& image, const AugmentationConfig& cfg,
                                Rng& rng);

/// Affine warp about the image center. Angle in degrees, translation in pixels.
/// `nearest` selects nearest-neighbour interpolation (used for masks).
torch::Tensor warp_affine(const torch::Tensor& grid, double angle_deg, double scale,
                          double shift_x, double shift_y, bool nearest);

/// Stacks images (and masks, when all present) into B×1×H×W tensors.
torch::Tensor stack_images(std::span<const Sample> samples);
torch::Tensor stack_masks(std::span<const Sample> samples);

/// Epoch-shuffled index stream over a dataset of fixed size.
class BatchSampler {
 public:
  BatchSampler(size_t dataset_size, uint64_t seed);
  std::vector<size_t> next(size_t batch_size);

 private:
  void reshuffle();

  std::vector<size_t> order_;
  size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace auxseg
