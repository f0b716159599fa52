#include <cmath>
#include <limits>
#include <vector>

#include "auxseg/auxtask.hpp"

namespace auxseg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared distance transform by lower envelope of parabolas
// (Felzenszwalb & Huttenlocher). `f` holds 0 at sites and +inf elsewhere on the
// first pass, squared column distances on the second; all finite values are
// integers, so results are exact in double precision.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int64_t>& v,
            std::vector<double>& z) {
  const auto n = static_cast<int64_t>(f.size());
  int64_t k = -1;
  for (int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0.0;
    for (;;) {
      const auto p = v[k];
      s = ((f[q] + static_cast<double>(q * q)) - (f[p] + static_cast<double>(p * p))) /
          static_cast<double>(2 * (q - p));
      if (s > z[k]) break;
      --k;  // z[0] = -inf stops this at k = 0
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int64_t j = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const auto p = v[j];
    d[q] = static_cast<double>((q - p) * (q - p)) + f[p];
  }
}

// Squared distance from every pixel to the nearest pixel where `site` is true.
std::vector<double> squared_edt(const std::vector<uint8_t>& site, int64_t h, int64_t w) {
  std::vector<double> grid(static_cast<size_t>(h * w));
  const auto n = std::max(h, w);
  std::vector<double> f(static_cast<size_t>(n)), d(static_cast<size_t>(n));
  std::vector<int64_t> v(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(n + 1));

  f.resize(static_cast<size_t>(h));
  d.resize(static_cast<size_t>(h));
  for (int64_t x = 0; x < w; ++x) {
    for (int64_t y = 0; y < h; ++y) f[y] = site[y * w + x] ? 0.0 : kInf;
    edt_1d(f, d, v, z);
    for (int64_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  f.resize(static_cast<size_t>(w));
  d.resize(static_cast<size_t>(w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) f[x] = grid[y * w + x];
    edt_1d(f, d, v, z);
    for (int64_t x = 0; x < w; ++x) grid[y * w + x] = d[x];
  }
  return grid;
}

}  // namespace

torch::Tensor sdm(const torch::Tensor& mask, SdmDirection direction) {
  if (mask.dim() != 2) throw std::invalid_argument("sdm: mask must be 2D, got " + shape_string(mask));
  const auto m = mask.to(torch::kFloat64).contiguous();
  const int64_t h = m.size(0), w = m.size(1);
  const auto* src = m.data_ptr<double>();

  // Measured pixels are the foreground for In, background for Out; distance is to the other class.
  const bool measure_foreground = direction == SdmDirection::In;
  std::vector<uint8_t> measured(static_cast<size_t>(h * w)), reference(static_cast<size_t>(h * w));
  int64_t n_measured = 0;
  for (int64_t i = 0; i < h * w; ++i) {
    if (src[i] != 0.0 && src[i] != 1.0) throw std::invalid_argument("sdm: mask is not binary");
    const bool fg = src[i] != 0.0;
    measured[i] = fg == measure_foreground;
    reference[i] = !measured[i];
    n_measured += measured[i];
  }

  auto out = torch::zeros({h, w}, torch::kFloat32);
  if (n_measured == 0) return out;
  if (n_measured == h * w) {
    throw UndefinedDistance(direction == SdmDirection::In
                                ? "sdm(in): undefined distance reference (mask has no background)"
                                : "sdm(out): undefined distance reference (mask has no foreground)");
  }
  const auto sq = squared_edt(reference, h, w);
  auto* dst = out.data_ptr<float>();
  for (int64_t i = 0; i < h * w; ++i) {
    if (measured[i]) dst[i] = static_cast<float>(std::sqrt(sq[i]));
  }
  return out;
}

torch::Tensor normalize_sdm(const torch::Tensor& map) {
  const double peak = map.max().item<double>();
  return peak > 0.0 ? map / peak : map.clone();
}

torch::Tensor sdm_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  require_same_shape(pred, target, "sdm_loss");
  return (pred - target).pow(2).mean();
}

}  // namespace auxseg
