#include <algorithm>
#include <iostream>

#include "auxseg/auxtask.hpp"

namespace F = torch::nn::functional;

namespace auxseg {

AuxTask::AuxTask(std::string name, Hyperparams defaults, const Hyperparams& overrides)
    : name_(std::move(name)), params_(std::move(defaults)) {
  for (const auto& [key, value] : overrides) {
    if (!params_.count(key)) {
      throw std::invalid_argument("task '" + name_ + "' has no hyperparameter '" + key + "'");
    }
    params_[key] = value;
  }
}

double AuxTask::param(const std::string& key) const {
  const auto it = params_.find(key);
  if (it == params_.end()) throw std::out_of_range("task '" + name_ + "': unknown hyperparameter '" + key + "'");
  return it->second;
}

namespace {

int64_t as_int(double v) { return static_cast<int64_t>(std::llround(v)); }

// Largest multiple of `stride` not above `size * fraction`, at least `stride`.
int64_t crop_for(int64_t size, double fraction, int64_t stride) {
  const auto raw = static_cast<int64_t>(static_cast<double>(size) * fraction);
  return std::max(stride, raw / stride * stride);
}

class SdmTask final : public AuxTask {
 public:
  SdmTask(std::string name, SdmDirection dir, const TaskContext& ctx, const Hyperparams& overrides)
      : AuxTask(std::move(name), {}, overrides), dir_(dir), ctx_(ctx) {}

  HeadKind head_kind() const override { return HeadKind::DenseMap; }
  HeadSpec head_spec() const override { return HeadSpec{name(), HeadKind::DenseMap, 1, 0, 1, false}; }

  AuxBatch make_batch(std::span<const Sample> samples, Rng& rng) const override {
    std::vector<torch::Tensor> images, targets;
    AuxBatch batch;
    for (const auto& s : samples) {
      const auto aug = augment(s, ctx_.augmentation, rng);
      if (!aug.mask) throw std::invalid_argument("task '" + name() + "' needs masks; sample '" + s.id + "' has none");
      try {
        targets.push_back(normalize_sdm(sdm(*aug.mask, dir_)).unsqueeze(0));
        images.push_back(aug.image.unsqueeze(0));
      } catch (const UndefinedDistance& e) {
        std::clog << "warning: task " << name() << " skipped sample " << s.id << ": " << e.what() << '\n';
        ++batch.skipped;
      }
    }
    if (images.empty()) throw DegenerateBatch("task '" + name() + "': every sample in the batch is degenerate");
    batch.inputs = {torch::stack(images)};
    batch.target = torch::stack(targets);
    return batch;
  }

  torch::Tensor loss(ModelBundle& model, const AuxBatch& batch) override {
    const auto pred = model->head(name())->forward(model->decode(batch.inputs.at(0)));
    return sdm_loss(pred, batch.target);
  }

 private:
  SdmDirection dir_;
  TaskContext ctx_;
};

class RkbTask final : public AuxTask {
 public:
  RkbTask(const TaskContext& ctx, const Hyperparams& overrides)
      : AuxTask("rkb", {{"rows", 2}, {"cols", 2}, {"classes", 24}, {"permutation_seed", 0}}, overrides),
        ctx_(ctx),
        rows_(as_int(param("rows"))),
        cols_(as_int(param("cols"))),
        perms_(rkb_permutations(rows_, cols_, as_int(param("classes")),
                                static_cast<uint64_t>(as_int(param("permutation_seed"))))) {}

  HeadKind head_kind() const override { return HeadKind::ClassLogits; }
  HeadSpec head_spec() const override {
    return HeadSpec{name(), HeadKind::ClassLogits, static_cast<int64_t>(perms_.size()), 0, rows_ * cols_, false};
  }
  const std::vector<Permutation>& permutations() const { return perms_; }

  AuxBatch make_batch(std::span<const Sample> samples, Rng& rng) const override {
    std::vector<torch::Tensor> stacks;
    std::vector<int64_t> labels;
    for (const auto& s : samples) {
      const auto aug = augment(Sample{s.id, s.image, s.mask}, ctx_.augmentation, rng);
      // Patches must be stride multiples so the encoder accepts them.
      const int64_t ph = aug.height() / rows_ / ctx_.stride * ctx_.stride;
      const int64_t pw = aug.width() / cols_ / ctx_.stride * ctx_.stride;
      if (ph == 0 || pw == 0) throw std::invalid_argument("rkb: image too small for the patch grid");
      const int64_t top = (aug.height() - ph * rows_) / 2, left = (aug.width() - pw * cols_) / 2;
      const auto img = aug.image.slice(0, top, top + ph * rows_).slice(1, left, left + pw * cols_);
      const auto label = rng.integer(0, static_cast<int64_t>(perms_.size()) - 1);
      auto ex = rkb_make_example(img, rows_, cols_, label, perms_);
      stacks.push_back(ex.patches.unsqueeze(1));  // P×1×h×w
      labels.push_back(ex.label);
    }
    AuxBatch batch;
    batch.inputs = {torch::cat(stacks, 0)};
    batch.target = torch::tensor(labels, torch::kInt64);
    return batch;
  }

  torch::Tensor loss(ModelBundle& model, const AuxBatch& batch) override {
    const auto n = batch.target.size(0);
    const auto feats = model->pooled(batch.inputs.at(0)).reshape({n, -1});
    return F::cross_entropy(model->head(name())->forward(feats), batch.target);
  }

 private:
  TaskContext ctx_;
  int64_t rows_, cols_;
  std::vector<Permutation> perms_;
};

// Shared by MoCo and VICReg: two crops per sample at a fraction of the input size.
AuxBatch make_view_batch(std::span<const Sample> samples, const TaskContext& ctx, double crop_fraction,
                         double min_scale, double max_scale, Rng& rng) {
  std::vector<torch::Tensor> va, vb;
  for (const auto& s : samples) {
    ViewConfig cfg;
    cfg.crop_size = crop_for(std::min(s.height(), s.width()), crop_fraction, ctx.stride);
    cfg.scale = {min_scale, max_scale};
    cfg.intensity = ctx.augmentation;
    auto [a, b] = two_view_augment(s.image, cfg, rng);
    va.push_back(a.unsqueeze(0));
    vb.push_back(b.unsqueeze(0));
  }
  AuxBatch batch;
  batch.inputs = {torch::stack(va), torch::stack(vb)};
  return batch;
}

class MocoTask final : public AuxTask {
 public:
  MocoTask(const TaskContext& ctx, const Hyperparams& overrides)
      : AuxTask("moco",
                {{"temperature", 0.2}, {"momentum", 0.99}, {"hidden", 128}, {"out_dim", 64},
                 {"crop_fraction", 0.5}, {"min_scale", 0.75}, {"max_scale", 1.5}},
                overrides),
        ctx_(ctx) {}

  HeadKind head_kind() const override { return HeadKind::VectorEmbedding; }
  HeadSpec head_spec() const override {
    return HeadSpec{name(), HeadKind::VectorEmbedding, as_int(param("out_dim")), as_int(param("hidden")), 1, true};
  }

  AuxBatch make_batch(std::span<const Sample> samples, Rng& rng) const override {
    return make_view_batch(samples, ctx_, param("crop_fraction"), param("min_scale"), param("max_scale"), rng);
  }

  torch::Tensor loss(ModelBundle& model, const AuxBatch& batch) override {
    ensure_momentum_branch(model);
    auto head = model->head(name());
    const auto& a = batch.inputs.at(0);
    const auto& b = batch.inputs.at(1);
    const auto qa = head->predict(head->forward(model->pooled(a)));
    const auto qb = head->predict(head->forward(model->pooled(b)));
    torch::Tensor ka, kb;
    {
      torch::NoGradGuard no_grad;
      ka = momentum_head_->forward(momentum_encoder_->pooled(a));
      kb = momentum_head_->forward(momentum_encoder_->pooled(b));
    }
    const double tau = param("temperature");
    return 0.5 * (moco_loss(qa, kb, tau) + moco_loss(qb, ka, tau));
  }

  void after_step(ModelBundle& model) override {
    if (!momentum_encoder_) return;
    const double m = param("momentum");
    torch::NoGradGuard no_grad;
    const auto online = online_params(model);
    const auto target = momentum_params();
    for (size_t i = 0; i < online.size(); ++i) target[i].mul_(m).add_(online[i].detach(), 1.0 - m);
  }

 private:
  std::vector<torch::Tensor> online_params(ModelBundle& model) const {
    auto p = model->encoder->parameters();
    auto h = model->head(name())->projector->parameters();
    p.insert(p.end(), h.begin(), h.end());
    return p;
  }

  std::vector<torch::Tensor> momentum_params() const {
    auto p = momentum_encoder_->parameters();
    auto h = momentum_head_->projector->parameters();
    p.insert(p.end(), h.begin(), h.end());
    return p;
  }

  void ensure_momentum_branch(ModelBundle& model) {
    if (momentum_encoder_) return;
    momentum_encoder_ = Encoder(model->arch());
    auto spec = head_spec();
    spec.predictor = false;
    momentum_head_ = Head(spec, model->arch());
    for (auto& p : momentum_encoder_->parameters()) p.set_requires_grad(false);
    for (auto& p : momentum_head_->parameters()) p.set_requires_grad(false);
    restore(momentum_params(), online_params(model));
  }

  TaskContext ctx_;
  Encoder momentum_encoder_{nullptr};
  Head momentum_head_{nullptr};
};

class VicregTask final : public AuxTask {
 public:
  VicregTask(const TaskContext& ctx, const Hyperparams& overrides)
      : AuxTask("vicreg",
                {{"lambda_variance", 25}, {"lambda_invariance", 25}, {"lambda_covariance", 1},
                 {"gamma", 1}, {"eps", 1e-4}, {"hidden", 128}, {"out_dim", 128},
                 {"crop_fraction", 0.5}, {"min_scale", 0.75}, {"max_scale", 1.5}},
                overrides),
        ctx_(ctx) {}

  HeadKind head_kind() const override { return HeadKind::VectorEmbedding; }
  HeadSpec head_spec() const override {
    return HeadSpec{name(), HeadKind::VectorEmbedding, as_int(param("out_dim")), as_int(param("hidden")), 1, false};
  }

  AuxBatch make_batch(std::span<const Sample> samples, Rng& rng) const override {
    return make_view_batch(samples, ctx_, param("crop_fraction"), param("min_scale"), param("max_scale"), rng);
  }

  torch::Tensor loss(ModelBundle& model, const AuxBatch& batch) override {
    auto head = model->head(name());
    const auto za = head->forward(model->pooled(batch.inputs.at(0)));
    const auto zb = head->forward(model->pooled(batch.inputs.at(1)));
    VicregCoeffs c{param("lambda_variance"), param("lambda_invariance"), param("lambda_covariance"),
                   param("gamma"), param("eps")};
    return vicreg_loss(za, zb, c).total;
  }

 private:
  TaskContext ctx_;
};

}  // namespace

bool is_registered_task(const std::string& name) {
  return std::find(kTaskNames.begin(), kTaskNames.end(), name) != kTaskNames.end();
}

std::unique_ptr<AuxTask> make_task(const std::string& name, const TaskContext& ctx,
                                   const Hyperparams& overrides) {
  if (name == "sdm_in") return std::make_unique<SdmTask>(name, SdmDirection::In, ctx, overrides);
  if (name == "sdm_out") return std::make_unique<SdmTask>(name, SdmDirection::Out, ctx, overrides);
  if (name == "rkb") return std::make_unique<RkbTask>(ctx, overrides);
  if (name == "moco") return std::make_unique<MocoTask>(ctx, overrides);
  if (name == "vicreg") return std::make_unique<VicregTask>(ctx, overrides);
  throw std::invalid_argument("unknown auxiliary task '" + name + "'");
}

Hyperparams task_defaults(const std::string& name) {
  return make_task(name, TaskContext{})->hyperparams();
}

}  // namespace auxseg
