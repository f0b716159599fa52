#include <cmath>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

#include "auxseg/data.hpp"

namespace auxseg {
namespace {

cv::Mat as_mat(torch::Tensor& t) {
  return cv::Mat(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32F,
                 t.data_ptr<float>());
}

bool finite_range(const std::array<double, 2>& r) {
  return std::isfinite(r[0]) && std::isfinite(r[1]) && r[0] <= r[1];
}

double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

}  // namespace

AugmentationConfig AugmentationConfig::disabled() {
  AugmentationConfig c;
  c.p_translate = c.p_zoom = c.p_rotate = 0.0;
  c.p_noise = c.p_blur = c.p_brightness = c.p_contrast = c.p_gamma = 0.0;
  return c;
}

void AugmentationConfig::validate() const {
  for (double p : {p_translate, p_zoom, p_rotate, p_noise, p_blur, p_brightness, p_contrast,
                   p_gamma}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augmentation: probability outside [0,1]");
  }
  if (!std::isfinite(translate_fraction)) {
    throw std::invalid_argument("augmentation: non-finite parameter");
  }
  for (const auto* r : {&zoom, &rotation, &noise_std, &blur_sigma, &brightness, &contrast, &gamma}) {
    if (!finite_range(*r)) throw std::invalid_argument("augmentation: invalid range");
  }
}

torch::Tensor warp_affine(const torch::Tensor& grid, double angle_deg, double scale,
                          double shift_x, double shift_y, bool nearest) {
  auto src = grid.to(torch::kFloat32).contiguous().clone();
  auto dst = torch::empty_like(src);
  cv::Mat s = as_mat(src), d = as_mat(dst);
  const cv::Point2f center(static_cast<float>(src.size(1) - 1) / 2.0f,
                           static_cast<float>(src.size(0) - 1) / 2.0f);
  cv::Mat m = cv::getRotationMatrix2D(center, angle_deg, scale);
  m.at<double>(0, 2) += shift_x;
  m.at<double>(1, 2) += shift_y;
  cv::warpAffine(s, d, m, s.size(), nearest ? cv::INTER_NEAREST : cv::INTER_LINEAR,
                 cv::BORDER_REFLECT_101);
  return dst;
}

torch::Tensor augment_intensity(const torch::Tensor& image, const AugmentationConfig& cfg,
                                Rng& rng) {
  auto img = image.to(torch::kFloat32).contiguous().clone();
  if (rng.bernoulli(clamp01(cfg.p_noise))) {
    const double sd = std::max(0.0, rng.uniform(cfg.noise_std[0], cfg.noise_std[1]));
    auto acc = img.accessor<float, 2>();
    for (int64_t y = 0; y < img.size(0); ++y)
      for (int64_t x = 0; x < img.size(1); ++x)
        acc[y][x] = static_cast<float>(acc[y][x] + rng.normal(0.0, sd));
  }
  if (rng.bernoulli(clamp01(cfg.p_blur))) {
    const double sigma = std::max(1e-3, rng.uniform(cfg.blur_sigma[0], cfg.blur_sigma[1]));
    auto out = torch::empty_like(img);
    cv::Mat s = as_mat(img), d = as_mat(out);
    cv::GaussianBlur(s, d, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT_101);
    img = out;
  }
  if (rng.bernoulli(clamp01(cfg.p_brightness))) {
    img.mul_(rng.uniform(cfg.brightness[0], cfg.brightness[1]));
  }
  if (rng.bernoulli(clamp01(cfg.p_contrast))) {
    const double factor = rng.uniform(cfg.contrast[0], cfg.contrast[1]);
    const double mean = img.mean().item<double>();
    img.sub_(mean).mul_(factor).add_(mean);
  }
  img.clamp_(0.0, 1.0);
  if (rng.bernoulli(clamp01(cfg.p_gamma))) {
    img.pow_(std::max(1e-3, rng.uniform(cfg.gamma[0], cfg.gamma[1])));
  }
  return img.clamp_(0.0, 1.0);
}

Sample augment(const Sample& sample, const AugmentationConfig& cfg, Rng& rng) {
  const double h = static_cast<double>(sample.height());
  const double w = static_cast<double>(sample.width());
  double angle = 0.0, scale = 1.0, dx = 0.0, dy = 0.0;
  if (rng.bernoulli(clamp01(cfg.p_translate))) {
    const double t = std::abs(cfg.translate_fraction);
    dx = rng.uniform(-t, t) * w;
    dy = rng.uniform(-t, t) * h;
  }
  if (rng.bernoulli(clamp01(cfg.p_zoom))) {
    scale = std::max(1e-2, rng.uniform(cfg.zoom[0], cfg.zoom[1]));
  }
  if (rng.bernoulli(clamp01(cfg.p_rotate))) {
    angle = rng.uniform(cfg.rotation[0], cfg.rotation[1]);
  }

  Sample out{sample.id, sample.image, sample.mask};
  if (angle != 0.0 || scale != 1.0 || dx != 0.0 || dy != 0.0) {
    out.image = warp_affine(sample.image, angle, scale, dx, dy, false).clamp_(0.0, 1.0);
    if (sample.mask) out.mask = warp_affine(*sample.mask, angle, scale, dx, dy, true).gt(0.5).to(torch::kFloat32);
  }
  out.image = augment_intensity(out.image, cfg, rng);
  return out;
}

torch::Tensor stack_images(std::span<const Sample> samples) {
  std::vector<torch::Tensor> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(s.image.unsqueeze(0));
  return torch::stack(v);
}

torch::Tensor stack_masks(std::span<const Sample> samples) {
  std::vector<torch::Tensor> v;
  v.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.mask) throw std::invalid_argument("stack_masks: sample '" + s.id + "' has no mask");
    v.push_back(s.mask->unsqueeze(0));
  }
  return torch::stack(v);
}

}  // namespace auxseg
