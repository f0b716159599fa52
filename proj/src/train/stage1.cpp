#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "auxseg/train.hpp"

namespace auxseg {

std::string to_string(TrainingMode m) { return m == TrainingMode::Joint ? "joint" : "pretrain"; }

TrainingMode training_mode_from_string(const std::string& s) {
  if (s == "joint") return TrainingMode::Joint;
  if (s == "pretrain") return TrainingMode::Pretrain;
  throw std::invalid_argument("unknown training mode '" + s + "'");
}

TrainingMode select_mode(double val_dice_joint, double val_dice_pretrain) {
  return val_dice_pretrain > val_dice_joint ? TrainingMode::Pretrain : TrainingMode::Joint;
}

std::vector<StageOneResult> run_stage1(std::span<const std::string> tasks, const ModeTrainer& trainer,
                                       int workers) {
  if (tasks.empty()) throw std::invalid_argument("run_stage1: at least one auxiliary task is required");
  struct Job {
    size_t task;
    TrainingMode mode;
    ModeRun run;
    std::exception_ptr error;
  };
  std::vector<Job> jobs;
  for (size_t i = 0; i < tasks.size(); ++i) {
    jobs.push_back(Job{i, TrainingMode::Joint, {}, nullptr});
    jobs.push_back(Job{i, TrainingMode::Pretrain, {}, nullptr});
  }

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t j = next++; j < jobs.size(); j = next++) {
      auto& job = jobs[j];
      try {
        job.run = trainer(tasks[job.task], job.mode);
      } catch (...) {
        job.error = std::current_exception();
      }
    }
  };
  const auto n_threads = static_cast<size_t>(std::clamp(workers, 1, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& job : jobs) {
    if (!job.error) continue;
    std::string what = "unknown error";
    try {
      std::rethrow_exception(job.error);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    throw std::runtime_error("stage 1 task '" + tasks[job.task] + "' (" + to_string(job.mode) +
                             " mode) failed: " + what);
  }

  std::vector<StageOneResult> out;
  for (size_t i = 0; i < tasks.size(); ++i) {
    auto& joint = jobs[2 * i].run;
    auto& pre = jobs[2 * i + 1].run;
    StageOneResult r;
    r.task_name = tasks[i];
    r.val_dice_joint = joint.val_dice;
    r.val_dice_pretrain = pre.val_dice;
    r.chosen_mode = select_mode(joint.val_dice, pre.val_dice);
    r.model = r.chosen_mode == TrainingMode::Joint ? joint.model : pre.model;
    r.history_joint = std::move(joint.history);
    r.history_pretrain = std::move(pre.history);
    out.push_back(std::move(r));
  }
  return out;
}

ModeTrainer make_mode_trainer(const DatasetSplits& splits, const ArchConfig& arch,
                              const TrainConfig& cfg, TaskFactory factory) {
  return [&splits, arch, cfg, factory](const std::string& task, TrainingMode mode) {
    TaskList tasks;
    tasks.push_back(factory(task));
    auto result = mode == TrainingMode::Joint ? train_joint(splits, tasks, arch, cfg)
                                              : pretrain_then_finetune(splits, tasks, arch, cfg);
    return ModeRun{result.model, result.best_val, std::move(result.history)};
  };
}

std::vector<StageOneResult> run_stage1(const DatasetSplits& splits, std::span<const std::string> tasks,
                                       const ArchConfig& arch, const TrainConfig& cfg,
                                       TaskFactory factory, int workers) {
  return run_stage1(tasks, make_mode_trainer(splits, arch, cfg, std::move(factory)), workers);
}

}  // namespace auxseg
