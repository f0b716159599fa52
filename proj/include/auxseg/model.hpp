#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace auxseg {

inline constexpr const char* kSegHead = "seg";

/// U-Net with a residual (ResNet-style) encoder.
///
/// Stage i of the encoder halves the resolution and has `stage_widths[i]` channels
/// built from `stage_blocks[i]` basic blocks; the decoder mirrors every stage with
/// an upsample + skip concatenation + two conv/GN/ReLU layers.
struct ArchConfig {
  int64_t input_channels = 1;
  std::vector<int64_t> stage_widths{16, 32, 64, 128};
  std::vector<int64_t> stage_blocks{1, 1, 1, 1};
  int64_t norm_groups = 8;

  static ArchConfig desk();
  /// ResNet-18 widths and depths (64/128/256/512, two blocks per stage).
  static ArchConfig paper();

  int64_t base_width() const { return stage_widths.front(); }
  int64_t bottleneck_width() const { return stage_widths.back(); }
  /// Input H and W must be divisible by this.
  int64_t total_stride() const { return int64_t{1} << stage_widths.size(); }

  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

/// Group count for GroupNorm: the largest divisor of `channels` not above `groups`.
int64_t norm_group_count(int64_t channels, int64_t groups);

enum class HeadKind { DenseMap, VectorEmbedding, ClassLogits };

std::string to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);

/// Describes one task head and what trunk feature it reads.
///
///  - DenseMap: 1×1 conv on the decoder output, `out_features` channels.
///  - ClassLogits: linear layer over `inputs` concatenated pooled bottleneck vectors.
///  - VectorEmbedding: 2-layer MLP (hidden → out_features) on the pooled bottleneck,
///    plus an optional 2-layer predictor MLP.
struct HeadSpec {
  std::string name;
  HeadKind kind = HeadKind::DenseMap;
  int64_t out_features = 1;
  int64_t hidden = 0;
  int64_t inputs = 1;
  bool predictor = false;

  bool operator==(const HeadSpec&) const = default;
};

void to_json(nlohmann::json& j, const HeadSpec& h);
void from_json(const nlohmann::json& j, HeadSpec& h);

HeadSpec segmentation_head_spec();

struct BasicBlockImpl : torch::nn::Module {
  BasicBlockImpl(int64_t in, int64_t out, int64_t stride, int64_t groups);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Sequential shortcut{nullptr};
};
TORCH_MODULE(BasicBlock);

struct EncoderImpl : torch::nn::Module {
  explicit EncoderImpl(const ArchConfig& arch);
  /// Feature pyramid: stem output at full resolution followed by each stage output.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);
  /// Global-average-pooled bottleneck, B×bottleneck_width.
  torch::Tensor pooled(const torch::Tensor& x);

  torch::nn::Sequential stem{nullptr};
  torch::nn::ModuleList stages{nullptr};
};
TORCH_MODULE(Encoder);

struct DecoderImpl : torch::nn::Module {
  explicit DecoderImpl(const ArchConfig& arch);
  /// Returns base_width channels at the input resolution.
  torch::Tensor forward(const std::vector<torch::Tensor>& pyramid);

  torch::nn::ModuleList levels{nullptr};
};
TORCH_MODULE(Decoder);

struct HeadImpl : torch::nn::Module {
  HeadImpl(const HeadSpec& spec, const ArchConfig& arch);

  /// DenseMap: decoder features → map. ClassLogits: concatenated pooled features →
  /// logits. VectorEmbedding: pooled features → projection.
  torch::Tensor forward(const torch::Tensor& features);
  /// VectorEmbedding heads with a predictor only.
  torch::Tensor predict(const torch::Tensor& projection);

  HeadSpec spec;
  torch::nn::Conv2d conv{nullptr};
  torch::nn::Linear linear{nullptr};
  torch::nn::Sequential projector{nullptr}, predictor{nullptr};
};
TORCH_MODULE(Head);

struct BundleMetadata {
  uint64_t seed = 0;
  int64_t step = 0;
  bool operator==(const BundleMetadata&) const = default;
};

/// Shared trunk (encoder + decoder) plus named task heads.
///
/// Each component is initialized from its own stream derived from (seed, component
/// name), so the trunk and segmentation head of two bundles built with the same
/// seed agree regardless of which auxiliary heads are attached.
class ModelBundleImpl : public torch::nn::Module {
 public:
  ModelBundleImpl(ArchConfig arch, std::vector<HeadSpec> heads, uint64_t seed);

  /// Sigmoid segmentation probabilities, B×1×H×W.
  torch::Tensor forward(const torch::Tensor& x) { return segment(x); }
  torch::Tensor segment(const torch::Tensor& x);
  /// Decoder output (B×base_width×H×W) from a fresh trunk pass.
  torch::Tensor decode(const torch::Tensor& x);
  torch::Tensor pooled(const torch::Tensor& x) { return encoder->pooled(x); }

  bool has_head(const std::string& name) const;
  Head head(const std::string& name) const;
  std::vector<std::string> head_names() const;
  const std::vector<HeadSpec>& head_specs() const { return specs_; }
  const ArchConfig& arch() const { return arch_; }

  std::vector<torch::Tensor> shared_parameters() const;
  std::vector<torch::Tensor> head_parameters(const std::string& name) const;

  void check_input(const torch::Tensor& x) const;

  BundleMetadata meta;
  Encoder encoder{nullptr};
  Decoder decoder{nullptr};

 private:
  ArchConfig arch_;
  std::vector<HeadSpec> specs_;
  std::map<std::string, Head> heads_;
};
TORCH_MODULE(ModelBundle);

/// Builds a bundle with the segmentation head plus one head per spec.
ModelBundle build_model(const ArchConfig& arch, std::span<const HeadSpec> aux_heads, uint64_t seed);

class ArchitectureMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Copies the trunk parameters of `source` into `target`; heads of `target` are
/// left untouched. Returns `target`.
ModelBundle transfer_shared(const ModelBundle& source, ModelBundle target);

/// Deep copy (fresh parameter storage) of a bundle.
ModelBundle clone_model(const ModelBundle& m);

/// Parameter value snapshots, used for best-validation retention.
std::vector<torch::Tensor> snapshot(std::span<const torch::Tensor> params);
void restore(std::span<const torch::Tensor> params, std::span<const torch::Tensor> values);

/// FNV-1a over the raw bytes of the given tensors.
uint64_t parameter_checksum(std::span<const torch::Tensor> params);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int64_t kCheckpointVersion = 1;

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace auxseg
