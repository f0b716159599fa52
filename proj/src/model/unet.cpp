#include <numeric>

#include "auxseg/model.hpp"

namespace F = torch::nn::functional;

namespace auxseg {
namespace {

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

torch::nn::GroupNorm group_norm(int64_t channels, int64_t groups) {
  return torch::nn::GroupNorm(norm_group_count(channels, groups), channels);
}

void append_conv_norm_relu(torch::nn::Sequential& seq, int64_t in, int64_t out, int64_t groups) {
  seq->push_back(conv3x3(in, out));
  seq->push_back(group_norm(out, groups));
  seq->push_back(torch::nn::ReLU());
}

torch::nn::Sequential mlp(int64_t in, int64_t hidden, int64_t out) {
  return torch::nn::Sequential(torch::nn::Linear(in, hidden), torch::nn::ReLU(),
                               torch::nn::Linear(hidden, out));
}

}  // namespace

int64_t norm_group_count(int64_t channels, int64_t groups) {
  const int64_t g = std::gcd(channels, std::max<int64_t>(groups, 1));
  return std::max<int64_t>(g, 1);
}

ArchConfig ArchConfig::desk() { return ArchConfig{}; }

ArchConfig ArchConfig::paper() {
  ArchConfig a;
  a.stage_widths = {64, 128, 256, 512};
  a.stage_blocks = {2, 2, 2, 2};
  return a;
}

void ArchConfig::validate() const {
  if (input_channels <= 0) throw std::invalid_argument("arch: input_channels must be positive");
  if (stage_widths.empty()) throw std::invalid_argument("arch: at least one encoder stage required");
  if (stage_widths.size() != stage_blocks.size()) {
    throw std::invalid_argument("arch: stage_widths and stage_blocks differ in length");
  }
  for (auto w : stage_widths)
    if (w <= 0) throw std::invalid_argument("arch: stage widths must be positive");
  for (auto b : stage_blocks)
    if (b <= 0) throw std::invalid_argument("arch: blocks per stage must be positive");
  if (norm_groups <= 0) throw std::invalid_argument("arch: norm_groups must be positive");
}

void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = nlohmann::json{{"input_channels", a.input_channels},
                     {"stage_widths", a.stage_widths},
                     {"stage_blocks", a.stage_blocks},
                     {"norm_groups", a.norm_groups}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
  j.at("input_channels").get_to(a.input_channels);
  j.at("stage_widths").get_to(a.stage_widths);
  j.at("stage_blocks").get_to(a.stage_blocks);
  j.at("norm_groups").get_to(a.norm_groups);
}

BasicBlockImpl::BasicBlockImpl(int64_t in, int64_t out, int64_t stride, int64_t groups)
    : conv1(register_module("conv1", conv3x3(in, out, stride))),
      conv2(register_module("conv2", conv3x3(out, out))),
      norm1(register_module("norm1", group_norm(out, groups))),
      norm2(register_module("norm2", group_norm(out, groups))) {
  if (stride != 1 || in != out) {
    shortcut = register_module(
        "shortcut",
        torch::nn::Sequential(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
            group_norm(out, groups)));
  }
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(norm1(conv1(x)));
  y = norm2(conv2(y));
  return torch::relu(y + (shortcut ? shortcut->forward(x) : x));
}

EncoderImpl::EncoderImpl(const ArchConfig& arch) {
  arch.validate();
  const auto g = arch.norm_groups;
  stem = torch::nn::Sequential();
  append_conv_norm_relu(stem, arch.input_channels, arch.stage_widths[0], g);
  register_module("stem", stem);
  stages = register_module("stages", torch::nn::ModuleList());
  int64_t in = arch.stage_widths[0];
  for (size_t i = 0; i < arch.stage_widths.size(); ++i) {
    const auto out = arch.stage_widths[i];
    torch::nn::Sequential stage;
    for (int64_t b = 0; b < arch.stage_blocks[i]; ++b) {
      stage->push_back(BasicBlock(b == 0 ? in : out, out, b == 0 ? 2 : 1, g));
    }
    stages->push_back(stage);
    in = out;
  }
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> pyramid;
  pyramid.reserve(stages->size() + 1);
  pyramid.push_back(stem->forward(x));
  for (const auto& stage : *stages) {
    pyramid.push_back(stage->as<torch::nn::Sequential>()->forward(pyramid.back()));
  }
  return pyramid;
}

torch::Tensor EncoderImpl::pooled(const torch::Tensor& x) {
  auto h = stem->forward(x);
  for (const auto& stage : *stages) h = stage->as<torch::nn::Sequential>()->forward(h);
  return h.mean({2, 3});
}

DecoderImpl::DecoderImpl(const ArchConfig& arch) {
  arch.validate();
  levels = register_module("levels", torch::nn::ModuleList());
  const auto& w = arch.stage_widths;
  const auto n = w.size();
  // levels[0] consumes the deepest feature; level k outputs the width of the skip it joins.
  int64_t in = w[n - 1];
  for (size_t k = 0; k < n; ++k) {
    const size_t skip_stage = n - 1 - k;  // pyramid index of the skip
    const int64_t skip_width = skip_stage == 0 ? w[0] : w[skip_stage - 1];
    torch::nn::Sequential level;
    append_conv_norm_relu(level, in + skip_width, skip_width, arch.norm_groups);
    append_conv_norm_relu(level, skip_width, skip_width, arch.norm_groups);
    levels->push_back(level);
    in = skip_width;
  }
}

torch::Tensor DecoderImpl::forward(const std::vector<torch::Tensor>& pyramid) {
  auto x = pyramid.back();
  const auto n = levels->size();
  for (size_t k = 0; k < n; ++k) {
    const auto& skip = pyramid[n - 1 - k];
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = levels[k]->as<torch::nn::Sequential>()->forward(torch::cat({x, skip}, 1));
  }
  return x;
}

HeadImpl::HeadImpl(const HeadSpec& s, const ArchConfig& arch) : spec(s) {
  if (spec.out_features <= 0) throw std::invalid_argument("head '" + spec.name + "': out_features must be positive");
  switch (spec.kind) {
    case HeadKind::DenseMap:
      conv = register_module(
          "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(arch.base_width(), spec.out_features, 1)));
      break;
    case HeadKind::ClassLogits:
      if (spec.inputs <= 0) throw std::invalid_argument("head '" + spec.name + "': inputs must be positive");
      linear = register_module(
          "linear", torch::nn::Linear(spec.inputs * arch.bottleneck_width(), spec.out_features));
      break;
    case HeadKind::VectorEmbedding:
      if (spec.hidden <= 0) throw std::invalid_argument("head '" + spec.name + "': hidden must be positive");
      projector = register_module("projector", mlp(arch.bottleneck_width(), spec.hidden, spec.out_features));
      if (spec.predictor) {
        predictor = register_module("predictor", mlp(spec.out_features, spec.hidden, spec.out_features));
      }
      break;
  }
}

torch::Tensor HeadImpl::forward(const torch::Tensor& features) {
  switch (spec.kind) {
    case HeadKind::DenseMap: return conv(features);
    case HeadKind::ClassLogits: return linear(features);
    case HeadKind::VectorEmbedding: return projector->forward(features);
  }
  return {};
}

torch::Tensor HeadImpl::predict(const torch::Tensor& projection) {
  if (!predictor) throw std::logic_error("head '" + spec.name + "' has no predictor");
  return predictor->forward(projection);
}

}  // namespace auxseg
