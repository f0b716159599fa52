#include <cmath>
#include <fstream>
#include <limits>

#include "auxseg/train.hpp"

namespace auxseg {

double TrainConfig::aux_weight(const std::string& task) const {
  const auto it = aux_weights.find(task);
  return it == aux_weights.end() ? default_aux_weight : it->second;
}

void TrainConfig::validate() const {
  if (batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
  if (!(lr0 > 0.0)) throw std::invalid_argument("train: lr0 must be > 0");
  if (!(power > 0.0)) throw std::invalid_argument("train: power must be > 0");
  if (steps <= 0 || pretrain_steps <= 0) throw std::invalid_argument("train: step budgets must be positive");
  if (val_every <= 0) throw std::invalid_argument("train: val_every must be positive");
  if (eval_batch_size <= 0) throw std::invalid_argument("train: eval_batch_size must be positive");
  augmentation.validate();
}

double lr_at(int64_t step, int64_t total, double lr0, double power) {
  if (total <= 0) throw std::invalid_argument("lr_at: total must be positive");
  if (step < 0 || step > total) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total) + "]");
  }
  return lr0 * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

void to_json(nlohmann::json& j, const HistoryEntry& e) {
  j = nlohmann::json{{"phase", e.phase},       {"step", e.step},         {"lr", e.lr},
                     {"loss_total", e.loss_total}, {"loss_seg", e.loss_seg}, {"loss_aux", e.loss_aux}};
  if (e.val_dice) j["val_dice"] = *e.val_dice;
  if (e.trunk_checksum) j["trunk_checksum"] = std::to_string(*e.trunk_checksum);
  if (e.seg_head_checksum) j["seg_head_checksum"] = std::to_string(*e.seg_head_checksum);
}

void from_json(const nlohmann::json& j, HistoryEntry& e) {
  j.at("phase").get_to(e.phase);
  j.at("step").get_to(e.step);
  j.at("lr").get_to(e.lr);
  j.at("loss_total").get_to(e.loss_total);
  j.at("loss_seg").get_to(e.loss_seg);
  j.at("loss_aux").get_to(e.loss_aux);
  if (j.contains("val_dice")) e.val_dice = j.at("val_dice").get<double>();
  if (j.contains("trunk_checksum")) e.trunk_checksum = std::stoull(j.at("trunk_checksum").get<std::string>());
  if (j.contains("seg_head_checksum")) e.seg_head_checksum = std::stoull(j.at("seg_head_checksum").get<std::string>());
}

void write_history(const std::filesystem::path& path, std::span<const HistoryEntry> history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : history) out << nlohmann::json(e).dump() << '\n';
}

std::vector<HistoryEntry> read_history(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<HistoryEntry> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line).get<HistoryEntry>());
  }
  return out;
}

torch::Tensor predict(ModelBundle& model, std::span<const Sample> samples, int64_t batch_size) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (size_t i = 0; i < samples.size(); i += static_cast<size_t>(batch_size)) {
    const auto n = std::min(samples.size() - i, static_cast<size_t>(batch_size));
    parts.push_back(model->segment(stack_images(samples.subspan(i, n))));
  }
  return torch::cat(parts, 0);
}

double validate(ModelBundle& model, std::span<const Sample> val, int64_t batch_size) {
  if (val.empty()) throw std::invalid_argument("validate: empty validation set");
  return mean_dice_score(predict(model, val, batch_size), stack_masks(val));
}

SegBatchStream::SegBatchStream(std::span<const Sample> train, const AugmentationConfig& aug,
                               uint64_t seed)
    : train_(train),
      aug_(aug),
      sampler_(train.size(), derive_seed(seed, "seg/order")),
      rng_(derive_seed(seed, "seg/augment")) {}

SegBatchStream::Batch SegBatchStream::next(int64_t batch_size) {
  std::vector<Sample> picked;
  for (auto idx : sampler_.next(static_cast<size_t>(batch_size))) {
    picked.push_back(augment(train_[idx], aug_, rng_));
  }
  return Batch{stack_images(picked), stack_masks(picked)};
}

TrainResult run_phase(ModelBundle& model, const PhaseSpec& spec,
                      const std::function<StepLosses(int64_t)>& step_loss) {
  if (spec.steps <= 0) throw std::invalid_argument("phase '" + spec.name + "': steps must be positive");
  TrainResult result;
  result.initial_trunk_checksum = parameter_checksum(model->shared_parameters());
  RAdam opt(spec.params, spec.optimizer);
  const auto all_params = model->parameters();
  std::vector<torch::Tensor> best;
  double best_val = -std::numeric_limits<double>::infinity();

  for (int64_t step = 0; step < spec.steps; ++step) {
    const double lr = lr_at(step, spec.steps, spec.lr0, spec.power);
    model->zero_grad();
    opt.zero_grad();
    const auto losses = step_loss(step);
    const double total = losses.total.item<double>();
    if (!std::isfinite(total)) {
      throw std::runtime_error("phase '" + spec.name + "': non-finite loss at step " + std::to_string(step));
    }
    losses.total.backward();
    opt.step(lr);
    if (spec.after_step) spec.after_step();

    HistoryEntry e{spec.name, step, lr, total, losses.seg, losses.aux, std::nullopt, std::nullopt, std::nullopt};
    if (!spec.val.empty() && ((step + 1) % spec.val_every == 0 || step + 1 == spec.steps)) {
      const double v = validate(model, spec.val, spec.eval_batch_size);
      e.val_dice = v;
      if (v > best_val) {
        best_val = v;
        result.best_step = step + 1;
        best = snapshot(all_params);
      }
    }
    if (spec.trace_parameters) {
      e.trunk_checksum = parameter_checksum(model->shared_parameters());
      if (model->has_head(kSegHead)) e.seg_head_checksum = parameter_checksum(model->head_parameters(kSegHead));
    }
    result.history.push_back(std::move(e));
  }

  if (!best.empty()) {
    restore(all_params, best);
    result.best_val = best_val;
    model->meta.step = result.best_step;
  } else {
    model->meta.step = spec.steps;
  }
  result.model = model;
  return result;
}

uint64_t model_seed(const TrainConfig& cfg) { return derive_seed(cfg.seed, "model"); }

namespace {

void require_splits(const DatasetSplits& splits) {
  if (splits.train.empty()) throw std::invalid_argument("training split is empty");
  if (splits.val.empty()) throw std::invalid_argument("validation split is empty");
}

PhaseSpec base_phase(const std::string& name, int64_t steps, const TrainConfig& cfg) {
  PhaseSpec p;
  p.name = name;
  p.steps = steps;
  p.lr0 = cfg.lr0;
  p.power = cfg.power;
  p.optimizer = cfg.optimizer;
  p.val_every = cfg.val_every;
  p.eval_batch_size = cfg.eval_batch_size;
  p.trace_parameters = cfg.trace_parameters;
  return p;
}

std::vector<torch::Tensor> seg_params(const ModelBundle& m) {
  auto p = m->shared_parameters();
  auto h = m->head_parameters(kSegHead);
  p.insert(p.end(), h.begin(), h.end());
  return p;
}

std::vector<HeadSpec> heads_of(const TaskList& tasks) {
  std::vector<HeadSpec> out;
  for (const auto& t : tasks) out.push_back(t->head_spec());
  return out;
}

// One auxiliary batch stream per task, independent of the segmentation stream.
struct AuxStreams {
  AuxStreams(const TaskList& tasks, std::span<const Sample> train, uint64_t seed) : train_(train) {
    for (const auto& t : tasks) {
      samplers.emplace_back(train.size(), derive_seed(seed, "aux/order/" + t->name()));
      rngs.emplace_back(derive_seed(seed, "aux/augment/" + t->name()));
    }
  }

  AuxBatch next(size_t task_index, const AuxTask& task, int64_t batch_size) {
    std::vector<Sample> picked;
    for (auto idx : samplers[task_index].next(static_cast<size_t>(batch_size))) picked.push_back(train_[idx]);
    return task.make_batch(picked, rngs[task_index]);
  }

  std::span<const Sample> train_;
  std::vector<BatchSampler> samplers;
  std::vector<Rng> rngs;
};

// Σ λ_i L_i (weighted) and Σ L_i (raw) for one step.
std::pair<torch::Tensor, double> aux_objective(ModelBundle& model, TaskList& tasks, AuxStreams& streams,
                                               const TrainConfig& cfg) {
  torch::Tensor weighted;
  double raw = 0.0;
  for (size_t i = 0; i < tasks.size(); ++i) {
    auto& task = *tasks[i];
    const auto batch = streams.next(i, task, cfg.batch_size);
    const auto l = task.loss(model, batch);
    raw += l.item<double>();
    const auto term = cfg.aux_weight(task.name()) * l;
    weighted = weighted.defined() ? weighted + term : term;
  }
  return {weighted, raw};
}

void after_aux_step(ModelBundle& model, TaskList& tasks) {
  for (auto& t : tasks) t->after_step(model);
}

}  // namespace

TrainResult train_conventional(const DatasetSplits& splits, const ArchConfig& arch,
                               const TrainConfig& cfg) {
  cfg.validate();
  require_splits(splits);
  auto model = build_model(arch, {}, model_seed(cfg));
  SegBatchStream seg(splits.train, cfg.augmentation, cfg.seed);
  auto spec = base_phase("conventional", cfg.steps, cfg);
  spec.params = seg_params(model);
  spec.val = splits.val;
  return run_phase(model, spec, [&](int64_t) {
    const auto b = seg.next(cfg.batch_size);
    const auto loss = soft_dice_loss(model->segment(b.images), b.masks);
    return StepLosses{loss, loss.item<double>(), 0.0};
  });
}

TrainResult train_joint(const DatasetSplits& splits, TaskList& tasks, const ArchConfig& arch,
                        const TrainConfig& cfg) {
  cfg.validate();
  require_splits(splits);
  if (tasks.empty()) throw std::invalid_argument("train_joint: no auxiliary task given");
  const auto heads = heads_of(tasks);
  auto model = build_model(arch, heads, model_seed(cfg));
  SegBatchStream seg(splits.train, cfg.augmentation, cfg.seed);
  AuxStreams aux(tasks, splits.train, cfg.seed);
  auto spec = base_phase("joint", cfg.steps, cfg);
  spec.params = model->parameters();
  spec.val = splits.val;
  spec.after_step = [&] { after_aux_step(model, tasks); };
  return run_phase(model, spec, [&](int64_t) {
    const auto b = seg.next(cfg.batch_size);
    const auto seg_loss = soft_dice_loss(model->segment(b.images), b.masks);
    auto [weighted, raw] = aux_objective(model, tasks, aux, cfg);
    return StepLosses{seg_loss + weighted, seg_loss.item<double>(), raw};
  });
}

TrainResult pretrain_auxiliary(const DatasetSplits& splits, TaskList& tasks, const ArchConfig& arch,
                               const TrainConfig& cfg) {
  cfg.validate();
  require_splits(splits);
  if (tasks.empty()) throw std::invalid_argument("pretrain_auxiliary: no auxiliary task given");
  auto model = build_model(arch, heads_of(tasks), model_seed(cfg));
  AuxStreams aux(tasks, splits.train, cfg.seed);
  auto spec = base_phase("pretrain", cfg.pretrain_steps, cfg);
  spec.params = model->shared_parameters();
  for (const auto& t : tasks) {
    auto h = model->head_parameters(t->name());
    spec.params.insert(spec.params.end(), h.begin(), h.end());
  }
  spec.after_step = [&] { after_aux_step(model, tasks); };
  return run_phase(model, spec, [&](int64_t) {
    auto [weighted, raw] = aux_objective(model, tasks, aux, cfg);
    return StepLosses{weighted, 0.0, raw};
  });
}

TrainResult finetune(const DatasetSplits& splits, const ModelBundle& pretrained, const TrainConfig& cfg) {
  cfg.validate();
  require_splits(splits);
  auto model = transfer_shared(pretrained, build_model(pretrained->arch(), {}, derive_seed(cfg.seed, "finetune-model")));
  SegBatchStream seg(splits.train, cfg.augmentation, cfg.seed);
  auto spec = base_phase("finetune", cfg.steps, cfg);
  spec.params = seg_params(model);
  spec.val = splits.val;
  return run_phase(model, spec, [&](int64_t) {
    const auto b = seg.next(cfg.batch_size);
    const auto loss = soft_dice_loss(model->segment(b.images), b.masks);
    return StepLosses{loss, loss.item<double>(), 0.0};
  });
}

TrainResult pretrain_then_finetune(const DatasetSplits& splits, TaskList& tasks,
                                   const ArchConfig& arch, const TrainConfig& cfg) {
  auto phase1 = pretrain_auxiliary(splits, tasks, arch, cfg);
  auto phase2 = finetune(splits, phase1.model, cfg);
  phase1.history.insert(phase1.history.end(), phase2.history.begin(), phase2.history.end());
  phase2.history = std::move(phase1.history);
  return phase2;
}

}  // namespace auxseg
