#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>

#include "auxseg/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace auxseg {
namespace {

// Everything the runner writes directly under the experiment directory.
const std::array<const char*, 6> kArtifacts{"baselines", "stage1", "stage2", "config.json", "report.json",
                                            "summary.txt"};

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, const RunOptions& opts)
      : cfg_(cfg), opts_(opts), root_(cfg.output_dir), hash_(config_hash(cfg)) {}

  json run() {
    prepare_directory();
    splits_ = load_splits(cfg_.data);
    log("data: " + std::to_string(splits_.train.size()) + " train / " + std::to_string(splits_.val.size()) +
        " val / " + std::to_string(splits_.test.size()) + " test");
    const auto arch = cfg_.arch();
    const auto& tc = cfg_.train;

    json baselines = json::object();
    if (cfg_.wants_baseline("conventional")) {
      baselines["conventional"] =
          model_phase("baselines/conventional", [&] { return train_conventional(splits_, arch, tc); });
    }
    if (cfg_.wants_baseline("joint_all")) {
      baselines["joint_all"] = model_phase("baselines/joint_all", [&] {
        auto tasks = all_tasks();
        return train_joint(splits_, tasks, arch, tc);
      });
    }
    if (cfg_.wants_baseline("mt_pretrain")) {
      baselines["mt_pretrain"] = model_phase("baselines/mt_pretrain", [&] {
        auto tasks = all_tasks();
        return pretrain_then_finetune(splits_, tasks, arch, tc);
      });
    }
    if (stopping_after("baselines")) return json::object();

    const auto names = cfg_.task_names();
    const auto stage1 = run_stage1(names, stage1_trainer(), opts_.workers);
    mark_done(root_ / "stage1");
    if (stopping_after("stage1")) return json::object();

    std::vector<ModelBundle> teachers;
    json stage1_rows = json::array();
    for (const auto& r : stage1) {
      teachers.push_back(r.model);
      const auto joint = read_json(job_dir(r.task_name, TrainingMode::Joint) / "result.json");
      const auto pre = read_json(job_dir(r.task_name, TrainingMode::Pretrain) / "result.json");
      const auto& chosen = r.chosen_mode == TrainingMode::Joint ? joint : pre;
      stage1_rows.push_back({{"task", r.task_name},
                             {"val_dice_joint", r.val_dice_joint},
                             {"val_dice_pretrain", r.val_dice_pretrain},
                             {"chosen_mode", to_string(r.chosen_mode)},
                             {"test_dice_joint", joint.at("test_dice")},
                             {"test_dice_pretrain", pre.at("test_dice")},
                             {"test_dice", chosen.at("test_dice")}});
    }

    if (cfg_.wants_baseline("ensemble")) baselines["ensemble"] = ensemble_phase(teachers);
    if (stopping_after("ensemble")) return json::object();

    DistillConfig dc{cfg_.distill.lambda_kd, std::nullopt, tc};
    if (cfg_.distill.arch) dc.student_arch = arch_preset(*cfg_.distill.arch);
    if (cfg_.distill.steps) dc.train.steps = *cfg_.distill.steps;
    const auto student = model_phase("stage2/student", [&] { return distill_student(splits_, teachers, dc); });

    json report = {{"config_hash", hash_},
                   {"seeds",
                    {{"experiment", cfg_.seed},
                     {"model", model_seed(tc)},
                     {"split", cfg_.data.split_seed},
                     {"data", cfg_.data.synthetic ? json(cfg_.data.synthetic->seed) : json(nullptr)}}},
                   {"split_sizes",
                    {{"train", splits_.train.size()}, {"val", splits_.val.size()}, {"test", splits_.test.size()}}},
                   {"lambda_kd", cfg_.distill.lambda_kd},
                   {"stage1", stage1_rows},
                   {"baselines", baselines},
                   {"student", student},
                   {"wall_clock_seconds", wall_clock_}};
    write_json(root_ / "report.json", report);
    std::ofstream(root_ / "summary.txt") << format_report(report);
    log("report written to " + (root_ / "report.json").string());
    return report;
  }

 private:
  void log(const std::string& msg) {
    if (!opts_.log) return;
    std::lock_guard<std::mutex> lock(log_mutex_);
    *opts_.log << msg << std::endl;
  }

  bool stopping_after(const std::string& phase) {
    if (opts_.stop_after != phase) return false;
    log("stopping after " + phase);
    return true;
  }

  void prepare_directory() {
    const bool complete = fs::exists(root_ / "report.json");
    bool partial = false;
    for (const char* a : kArtifacts) partial = partial || fs::exists(root_ / a);

    if (opts_.force) {
      for (const char* a : kArtifacts) fs::remove_all(root_ / a);
    } else if (complete && !opts_.resume) {
      throw std::runtime_error("experiment in " + root_.string() + " is already complete; pass --force to rerun it");
    } else if (partial && !opts_.resume) {
      throw std::runtime_error("experiment in " + root_.string() +
                               " has partial results; pass --resume to continue or --force to start over");
    }
    if (opts_.resume && fs::exists(root_ / "config.json")) {
      const auto stored = read_json(root_ / "config.json").at("hash").get<std::string>();
      if (stored != hash_) {
        throw std::runtime_error("config changed since the experiment started (stored hash " + stored +
                                 ", current " + hash_ + "); pass --force to start over");
      }
    }
    fs::create_directories(root_);
    write_json(root_ / "config.json", json{{"hash", hash_}, {"config", config_to_json(cfg_)}});
  }

  static bool done(const fs::path& dir) { return fs::exists(dir / "DONE"); }
  static void mark_done(const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream(dir / "DONE") << "done\n";
  }

  TaskFactory factory() const {
    const TaskContext ctx{cfg_.train.augmentation, cfg_.arch().total_stride()};
    std::map<std::string, Hyperparams> overrides;
    for (const auto& t : cfg_.tasks) overrides[t.name] = t.overrides;
    return [ctx, overrides](const std::string& name) { return make_task(name, ctx, overrides.at(name)); };
  }

  TaskList all_tasks() const {
    TaskList tasks;
    const auto make = factory();
    for (const auto& t : cfg_.tasks) tasks.push_back(make(t.name));
    return tasks;
  }

  void record_seconds(const std::string& phase, double seconds) {
    std::lock_guard<std::mutex> lock(log_mutex_);
    wall_clock_[phase] = seconds;
  }

  // Trains (or reloads) one model-producing phase; returns its result record.
  json model_phase(const std::string& phase, const std::function<TrainResult()>& train,
                   ModelBundle* model_out = nullptr) {
    const auto dir = root_ / phase;
    if (done(dir)) {
      auto rec = read_json(dir / "result.json");
      record_seconds(phase, rec.at("seconds").get<double>());
      if (model_out) *model_out = load_checkpoint(dir / "best.ckpt");
      log(phase + ": complete, reusing");
      return rec;
    }
    fs::remove_all(dir);
    fs::create_directories(dir);
    log(phase + ": training");
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r;
    try {
      r = train();
    } catch (const std::exception& e) {
      throw std::runtime_error("phase " + phase + " failed: " + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_checkpoint(r.model, dir / "best.ckpt");
    write_history(dir / "history.jsonl", r.history);
    const double test = validate(r.model, splits_.test, cfg_.train.eval_batch_size);
    json rec = {{"val_dice", r.best_val}, {"best_step", r.best_step}, {"test_dice", test}, {"seconds", seconds}};
    write_json(dir / "result.json", rec);
    mark_done(dir);
    record_seconds(phase, seconds);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: done in %.1fs, val %.4f (step %lld), test %.4f", phase.c_str(), seconds,
                  r.best_val, static_cast<long long>(r.best_step), test);
    log(buf);
    if (model_out) *model_out = r.model;
    return rec;
  }

  fs::path job_dir(const std::string& task, TrainingMode mode) const {
    return root_ / "stage1" / task / to_string(mode);
  }

  ModeTrainer stage1_trainer() {
    auto inner = make_mode_trainer(splits_, cfg_.arch(), cfg_.train, factory());
    return [this, inner](const std::string& task, TrainingMode mode) {
      const auto phase = "stage1/" + task + "/" + to_string(mode);
      ModeRun run;
      const auto rec = model_phase(
          phase,
          [&] {
            auto m = inner(task, mode);
            TrainResult r;
            r.model = m.model;
            r.best_val = m.val_dice;
            r.best_step = m.model->meta.step;
            r.history = std::move(m.history);
            return r;
          },
          &run.model);
      run.val_dice = rec.at("val_dice").get<double>();
      return run;
    };
  }

  json ensemble_phase(std::span<const ModelBundle> teachers) {
    const std::string phase = "baselines/ensemble";
    const auto dir = root_ / phase;
    if (done(dir)) {
      auto rec = read_json(dir / "result.json");
      record_seconds(phase, rec.at("seconds").get<double>());
      log(phase + ": complete, reusing");
      return rec;
    }
    fs::create_directories(dir);
    const auto t0 = std::chrono::steady_clock::now();
    auto score = [&](std::span<const Sample> samples) {
      torch::NoGradGuard no_grad;
      std::vector<ProbabilityMap> preds;
      for (ModelBundle t : teachers) preds.push_back(predict(t, samples, cfg_.train.eval_batch_size));
      return mean_dice_score(ensemble_average(preds), stack_masks(samples));
    };
    json rec = {{"val_dice", score(splits_.val)}, {"test_dice", score(splits_.test)}};
    rec["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(dir / "result.json", rec);
    mark_done(dir);
    record_seconds(phase, rec["seconds"].get<double>());
    log(phase + ": test " + std::to_string(rec["test_dice"].get<double>()));
    return rec;
  }

  const ExperimentConfig& cfg_;
  const RunOptions& opts_;
  fs::path root_;
  std::string hash_;
  DatasetSplits splits_;
  json wall_clock_ = json::object();
  std::mutex log_mutex_;
};

}  // namespace

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

json run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  return Runner(cfg, opts).run();
}

json run_repeats(const ExperimentConfig& cfg, int repeats, const RunOptions& opts) {
  if (repeats < 1) throw std::invalid_argument("repeats must be at least 1");
  if (repeats == 1) return run_experiment(cfg, opts);

  std::map<std::string, std::vector<double>> rows;
  json runs = json::array();
  for (int r = 0; r < repeats; ++r) {
    auto c = cfg;
    c.seed = cfg.seed + static_cast<uint64_t>(r);
    c.train.seed = c.seed;
    c.output_dir = cfg.output_dir / ("repeat-" + std::to_string(r));
    const auto rep = run_experiment(c, opts);
    if (rep.empty()) return json::object();
    for (const auto& [name, rec] : rep.at("baselines").items()) rows[name].push_back(rec.at("test_dice"));
    rows["student"].push_back(rep.at("student").at("test_dice"));
    for (const auto& row : rep.at("stage1")) rows["stage1/" + row.at("task").get<std::string>()].push_back(row.at("test_dice"));
    runs.push_back(c.output_dir.string());
  }
  json summary = json::object();
  for (const auto& [name, v] : rows) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    summary[name] = {{"mean", mean}, {"std", sd}, {"values", v}};
  }
  json out = {{"config_hash", config_hash(cfg)}, {"repeats", repeats}, {"runs", runs}, {"test_dice", summary}};
  write_json(cfg.output_dir / "repeats.json", out);
  return out;
}

size_t generate_dataset(const ExperimentConfig& cfg, const fs::path& target, bool force) {
  if (!cfg.data.synthetic) throw std::invalid_argument("generate: the config's data section is not synthetic");
  if (fs::exists(target) && !fs::is_empty(target)) {
    if (!force) throw std::runtime_error("generate: " + target.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(target / "images");
    fs::remove_all(target / "masks");
  }
  const auto samples = generate_synthetic(*cfg.data.synthetic);
  save_directory(samples, target);
  return samples.size();
}

double evaluate_checkpoint(const fs::path& checkpoint, std::span<const Sample> samples, int64_t batch_size) {
  if (samples.empty()) throw std::invalid_argument("eval: no samples to evaluate");
  auto model = load_checkpoint(checkpoint);
  try {
    model->check_input(stack_images(samples.first(1)));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("eval: checkpoint " + checkpoint.string() + " does not fit the data: " + e.what());
  }
  return validate(model, samples, batch_size);
}

}  // namespace auxseg
