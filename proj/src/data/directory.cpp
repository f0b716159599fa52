#include <algorithm>
#include <map>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>

#include "auxseg/data.hpp"

namespace fs = std::filesystem;

namespace auxseg {
namespace {

std::map<std::string, fs::path> png_files(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png") out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

// Reads a grayscale PNG and returns it as float32 H×W scaled by the bit depth.
torch::Tensor read_gray(const fs::path& file) {
  cv::Mat m = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw std::runtime_error("cannot read image " + file.string());
  if (m.channels() != 1) {
    throw std::runtime_error("non-grayscale image " + file.string() + " (" +
                             std::to_string(m.channels()) + " channels)");
  }
  double scale = 0.0;
  switch (m.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw std::runtime_error("unsupported bit depth in " + file.string());
  }
  cv::Mat f;
  m.convertTo(f, CV_32F, scale);
  return torch::from_blob(f.data, {f.rows, f.cols}, torch::kFloat32).clone();
}

void write_gray(const fs::path& file, const torch::Tensor& grid, bool sixteen_bit) {
  auto g = grid.to(torch::kFloat32).contiguous();
  cv::Mat f(static_cast<int>(g.size(0)), static_cast<int>(g.size(1)), CV_32F, g.data_ptr<float>());
  cv::Mat out;
  if (sixteen_bit) {
    f.convertTo(out, CV_16U, 65535.0);
  } else {
    f.convertTo(out, CV_8U, 255.0);
  }
  if (!cv::imwrite(file.string(), out)) throw std::runtime_error("cannot write " + file.string());
}

}  // namespace

std::vector<Sample> load_directory(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  const auto images = png_files(root / "images");
  const auto masks = png_files(root / "masks");
  std::vector<Sample> out;
  for (const auto& [stem, path] : images) {
    const auto it = masks.find(stem);
    if (it == masks.end()) throw std::runtime_error("missing mask for image '" + stem + "'");
    Sample s{stem, read_gray(path), read_gray(it->second).gt(0).to(torch::kFloat32)};
    require_same_shape(s.image, *s.mask, ("sample '" + stem + "'").c_str());
    out.push_back(std::move(s));
  }
  return out;
}

void save_directory(std::span<const Sample> samples, const fs::path& root, bool sixteen_bit) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (const auto& s : samples) {
    write_gray(root / "images" / (s.id + ".png"), s.image.clamp(0.0, 1.0), sixteen_bit);
    if (s.mask) write_gray(root / "masks" / (s.id + ".png"), *s.mask, false);
  }
}

}  // namespace auxseg
