#include <cmath>
#include <set>

#include <ATen/CPUGeneratorImpl.h>

#include "auxseg/model.hpp"
#include "auxseg/rng.hpp"

namespace auxseg {
namespace {

// He-normal for trunk convolutions, fan-in uniform for linear layers and head
// convolutions, identity for GroupNorm affine terms. Draws come from a generator
// owned by the component.
void init_component(torch::nn::Module& module, uint64_t seed, bool is_head) {
  auto gen = at::detail::createCPUGenerator(seed);
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/true)) {
    if (auto* conv = child->as<torch::nn::Conv2d>(); conv && is_head) {
      const auto& w = conv->weight;
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.size(1) * w.size(2) * w.size(3)));
      w.uniform_(-bound, bound, gen);
      if (conv->bias.defined()) conv->bias.uniform_(-bound, bound, gen);
    } else if (conv) {
      const auto& w = conv->weight;
      const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
      w.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* lin = child->as<torch::nn::Linear>()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(lin->weight.size(1)));
      lin->weight.uniform_(-bound, bound, gen);
      if (lin->bias.defined()) lin->bias.uniform_(-bound, bound, gen);
    } else if (auto* gn = child->as<torch::nn::GroupNorm>()) {
      gn->weight.fill_(1.0);
      gn->bias.zero_();
    }
  }
}

std::vector<torch::Tensor> params_of(const torch::nn::Module& m) { return m.parameters(); }

}  // namespace

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::DenseMap: return "dense-map";
    case HeadKind::VectorEmbedding: return "vector-embedding";
    case HeadKind::ClassLogits: return "class-logits";
  }
  return "?";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "dense-map") return HeadKind::DenseMap;
  if (s == "vector-embedding") return HeadKind::VectorEmbedding;
  if (s == "class-logits") return HeadKind::ClassLogits;
  throw std::invalid_argument("unknown head kind '" + s + "'");
}

void to_json(nlohmann::json& j, const HeadSpec& h) {
  j = nlohmann::json{{"name", h.name},           {"kind", to_string(h.kind)},
                     {"out_features", h.out_features}, {"hidden", h.hidden},
                     {"inputs", h.inputs},       {"predictor", h.predictor}};
}

void from_json(const nlohmann::json& j, HeadSpec& h) {
  j.at("name").get_to(h.name);
  h.kind = head_kind_from_string(j.at("kind").get<std::string>());
  j.at("out_features").get_to(h.out_features);
  j.at("hidden").get_to(h.hidden);
  j.at("inputs").get_to(h.inputs);
  j.at("predictor").get_to(h.predictor);
}

HeadSpec segmentation_head_spec() { return HeadSpec{kSegHead, HeadKind::DenseMap, 1, 0, 1, false}; }

ModelBundleImpl::ModelBundleImpl(ArchConfig arch, std::vector<HeadSpec> heads, uint64_t seed)
    : arch_(std::move(arch)), specs_(std::move(heads)) {
  arch_.validate();
  meta.seed = seed;
  encoder = register_module("encoder", Encoder(arch_));
  decoder = register_module("decoder", Decoder(arch_));
  init_component(*encoder, derive_seed(seed, "encoder"), false);
  init_component(*decoder, derive_seed(seed, "decoder"), false);
  std::set<std::string> seen;
  for (const auto& spec : specs_) {
    if (!seen.insert(spec.name).second) {
      throw std::invalid_argument("duplicate task head '" + spec.name + "'");
    }
    auto h = register_module("head_" + spec.name, Head(spec, arch_));
    init_component(*h, derive_seed(seed, "head/" + spec.name), true);
    heads_.emplace(spec.name, h);
  }
}

void ModelBundleImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != arch_.input_channels) {
    throw std::invalid_argument("model input must be B×" + std::to_string(arch_.input_channels) +
                                "×H×W, got " + std::to_string(x.dim()) + "-d tensor");
  }
  const auto s = arch_.total_stride();
  if (x.size(2) % s != 0 || x.size(3) % s != 0) {
    throw std::invalid_argument("model input H and W must be divisible by " + std::to_string(s) +
                                ", got " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)));
  }
}

torch::Tensor ModelBundleImpl::decode(const torch::Tensor& x) {
  check_input(x);
  return decoder->forward(encoder->forward(x));
}

torch::Tensor ModelBundleImpl::segment(const torch::Tensor& x) {
  return torch::sigmoid(head(kSegHead)->forward(decode(x)));
}

bool ModelBundleImpl::has_head(const std::string& name) const { return heads_.count(name) != 0; }

Head ModelBundleImpl::head(const std::string& name) const {
  const auto it = heads_.find(name);
  if (it == heads_.end()) throw std::out_of_range("model has no head '" + name + "'");
  return it->second;
}

std::vector<std::string> ModelBundleImpl::head_names() const {
  std::vector<std::string> out;
  for (const auto& s : specs_) out.push_back(s.name);
  return out;
}

std::vector<torch::Tensor> ModelBundleImpl::shared_parameters() const {
  auto p = params_of(*encoder);
  auto d = params_of(*decoder);
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

std::vector<torch::Tensor> ModelBundleImpl::head_parameters(const std::string& name) const {
  return params_of(*head(name));
}

ModelBundle build_model(const ArchConfig& arch, std::span<const HeadSpec> aux_heads, uint64_t seed) {
  std::vector<HeadSpec> heads{segmentation_head_spec()};
  heads.insert(heads.end(), aux_heads.begin(), aux_heads.end());
  return ModelBundle(arch, std::move(heads), seed);
}

ModelBundle transfer_shared(const ModelBundle& source, ModelBundle target) {
  if (!(source->arch() == target->arch())) {
    throw ArchitectureMismatch("transfer_shared: source and target architectures differ");
  }
  const auto from = source->shared_parameters();
  const auto to = target->shared_parameters();
  restore(to, from);
  return target;
}

ModelBundle clone_model(const ModelBundle& m) {
  ModelBundle copy(m->arch(), m->head_specs(), m->meta.seed);
  copy->meta = m->meta;
  restore(copy->parameters(), m->parameters());
  return copy;
}

std::vector<torch::Tensor> snapshot(std::span<const torch::Tensor> params) {
  std::vector<torch::Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.detach().clone());
  return out;
}

void restore(std::span<const torch::Tensor> params, std::span<const torch::Tensor> values) {
  if (params.size() != values.size()) {
    throw ArchitectureMismatch("parameter count mismatch: " + std::to_string(params.size()) +
                               " vs " + std::to_string(values.size()));
  }
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].sizes() != values[i].sizes()) {
      throw ArchitectureMismatch("parameter shape mismatch at index " + std::to_string(i));
    }
    params[i].copy_(values[i]);
  }
}

uint64_t parameter_checksum(std::span<const torch::Tensor> params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    const auto c = p.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto n = static_cast<size_t>(c.numel()) * c.element_size();
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace auxseg
