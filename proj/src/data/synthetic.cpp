#include <cmath>
#include <numbers>
#include <stdexcept>

#include "auxseg/data.hpp"

namespace auxseg {
namespace {

// Bilinearly interpolated value noise on a coarse lattice.
torch::Tensor value_noise(int64_t h, int64_t w, int64_t cells, Rng& rng) {
  std::vector<double> lattice(static_cast<size_t>((cells + 1) * (cells + 1)));
  for (auto& v : lattice) v = rng.uniform();
  auto out = torch::empty({h, w}, torch::kFloat32);
  auto acc = out.accessor<float, 2>();
  for (int64_t y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / static_cast<double>(h) * cells;
    const auto y0 = static_cast<int64_t>(fy);
    const double ty = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(w) * cells;
      const auto x0 = static_cast<int64_t>(fx);
      const double tx = fx - static_cast<double>(x0);
      auto at = [&](int64_t r, int64_t c) { return lattice[static_cast<size_t>(r * (cells + 1) + c)]; };
      const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
      const double bot = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
      acc[y][x] = static_cast<float>(top * (1 - ty) + bot * ty);
    }
  }
  return out;
}

struct Ellipse {
  double cy, cx, ry, rx, angle, intensity;
};

bool inside(const Ellipse& e, double y, double x) {
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double dy = y - e.cy, dx = x - e.cx;
  const double u = (dx * c + dy * s) / e.rx;
  const double v = (-dx * s + dy * c) / e.ry;
  return u * u + v * v <= 1.0;
}

Sample draw_sample(const SyntheticDataConfig& cfg, Rng& rng, int64_t index) {
  const int64_t h = cfg.height, w = cfg.width;
  const double minside = static_cast<double>(std::min(h, w));
  for (;;) {
    auto image = (0.1 + 0.35 * value_noise(h, w, 4, rng));
    auto mask = torch::zeros({h, w}, torch::kFloat32);
    const auto n = rng.integer(cfg.min_shapes, cfg.max_shapes);
    std::vector<Ellipse> shapes;
    for (int64_t k = 0; k < n; ++k) {
      Ellipse e{};
      e.ry = rng.uniform(0.06, 0.2) * minside;
      e.rx = rng.uniform(0.06, 0.2) * minside;
      e.cy = rng.uniform(e.ry, static_cast<double>(h) - e.ry);
      e.cx = rng.uniform(e.rx, static_cast<double>(w) - e.rx);
      e.angle = rng.uniform(0.0, std::numbers::pi);
      e.intensity = rng.uniform(cfg.min_intensity, cfg.max_intensity);
      shapes.push_back(e);
    }
    auto img = image.accessor<float, 2>();
    auto msk = mask.accessor<float, 2>();
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        for (const auto& e : shapes) {
          if (inside(e, static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5)) {
            msk[y][x] = 1.0f;
            img[y][x] = static_cast<float>(std::max<double>(img[y][x], e.intensity));
          }
        }
      }
    }
    const double fg = mask.mean().item<double>();
    if (!(fg > 0.0 && fg < 0.5)) continue;
    if (cfg.noise_std > 0.0) {
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          img[y][x] = static_cast<float>(img[y][x] + rng.normal(0.0, cfg.noise_std));
    }
    image.clamp_(0.0, 1.0);
    char id[32];
    std::snprintf(id, sizeof(id), "syn_%05lld", static_cast<long long>(index));
    return Sample{id, image, mask};
  }
}

}  // namespace

std::vector<Sample> generate_synthetic(const SyntheticDataConfig& cfg) {
  if (cfg.count <= 0) throw std::invalid_argument("generate_synthetic: count must be positive");
  if (cfg.height < 8 || cfg.width < 8) {
    throw std::invalid_argument("generate_synthetic: height and width must be at least 8");
  }
  if (cfg.min_shapes < 1 || cfg.max_shapes < cfg.min_shapes) {
    throw std::invalid_argument("generate_synthetic: invalid shapes_per_image range");
  }
  if (!(cfg.noise_std >= 0.0)) throw std::invalid_argument("generate_synthetic: noise_std < 0");
  if (!(cfg.min_intensity <= cfg.max_intensity) || cfg.max_intensity > 1.0 ||
      cfg.min_intensity < 0.0) {
    throw std::invalid_argument("generate_synthetic: invalid intensity range");
  }
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(cfg.count));
  for (int64_t i = 0; i < cfg.count; ++i) {
    Rng rng(derive_seed(cfg.seed, "synthetic/" + std::to_string(i)));
    out.push_back(draw_sample(cfg, rng, i));
  }
  return out;
}

}  // namespace auxseg
