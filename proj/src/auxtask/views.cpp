#include <cmath>

#include <opencv2/imgproc.hpp>

#include "auxseg/auxtask.hpp"

namespace auxseg {
namespace {

torch::Tensor crop_resize(const torch::Tensor& image, int64_t top, int64_t left, int64_t side,
                          int64_t out_size) {
  auto crop = image.slice(0, top, top + side).slice(1, left, left + side).contiguous().clone();
  if (side == out_size) return crop;
  auto out = torch::empty({out_size, out_size}, torch::kFloat32);
  cv::Mat src(static_cast<int>(side), static_cast<int>(side), CV_32F, crop.data_ptr<float>());
  cv::Mat dst(static_cast<int>(out_size), static_cast<int>(out_size), CV_32F, out.data_ptr<float>());
  cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
  return out;
}

torch::Tensor one_view(const torch::Tensor& image, const ViewConfig& cfg, Rng& rng) {
  const int64_t h = image.size(0), w = image.size(1);
  const int64_t limit = std::min(h, w);
  int64_t side = cfg.crop_size;
  int64_t top = (h - side) / 2, left = (w - side) / 2;
  if (cfg.crop_jitter) {
    const double s = rng.uniform(cfg.scale[0], cfg.scale[1]);
    side = std::clamp<int64_t>(std::llround(static_cast<double>(cfg.crop_size) * s), 1, limit);
    top = rng.integer(0, h - side);
    left = rng.integer(0, w - side);
  }
  auto view = crop_resize(image, top, left, side, cfg.crop_size);
  return augment_intensity(view, cfg.intensity, rng);
}

}  // namespace

std::pair<torch::Tensor, torch::Tensor> two_view_augment(const torch::Tensor& image,
                                                         const ViewConfig& cfg, Rng& rng) {
  if (image.dim() != 2) throw std::invalid_argument("two_view_augment: image must be 2D");
  if (cfg.crop_size <= 0 || cfg.crop_size > std::min(image.size(0), image.size(1))) {
    throw std::invalid_argument("two_view_augment: crop size " + std::to_string(cfg.crop_size) +
                                " does not fit image " + shape_string(image));
  }
  const auto img = image.to(torch::kFloat32).contiguous();
  auto a = one_view(img, cfg, rng);
  auto b = one_view(img, cfg, rng);
  return {a, b};
}

}  // namespace auxseg
