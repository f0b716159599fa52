#pragma once

#include "auxseg/data.hpp"
#include "auxseg/train.hpp"

namespace fixture {

// 32×32 synthetic data, 16/4/4 split.
inline auxseg::DatasetSplits tiny_splits() {
  auxseg::SyntheticDataConfig cfg;
  cfg.count = 24;
  cfg.height = 32;
  cfg.width = 32;
  return auxseg::split(auxseg::generate_synthetic(cfg), {2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0}, 0);
}

inline auxseg::TrainConfig fast_config() {
  auxseg::TrainConfig c;
  c.batch_size = 4;
  c.steps = 4;
  c.pretrain_steps = 3;
  c.val_every = 2;
  c.eval_batch_size = 8;
  c.seed = 3;
  return c;
}

}  // namespace fixture

#include <string>

#include "auxseg/experiment.hpp"

namespace fixture {

// Every pipeline phase at toy size: 24 images of 32×32, two steps per phase.
inline std::string tiny_experiment_yaml(const std::string& output_dir) {
  return "seed: 1\n"
         "output_dir: " + output_dir + "\n"
         "data:\n"
         "  synthetic: {count: 24, height: 32, width: 32, seed: 5}\n"
         "  split: [0.6666666666666667, 0.16666666666666666, 0.16666666666666666]\n"
         "tasks: [sdm_in, sdm_out, rkb, moco, vicreg]\n"
         "train: {batch_size: 4, steps: 2, pretrain_steps: 2, val_every: 1, eval_batch_size: 8}\n";
}

// Names of the Dice fields that differ between two reports (empty when all agree).
inline std::vector<std::string> dice_differences(const nlohmann::json& a, const nlohmann::json& b) {
  std::vector<std::string> out;
  auto cmp = [&](const nlohmann::json& x, const nlohmann::json& y, const std::string& where) {
    for (const char* key : {"val_dice", "test_dice", "val_dice_joint", "val_dice_pretrain", "test_dice_joint",
                            "test_dice_pretrain", "chosen_mode"}) {
      if (x.contains(key) != y.contains(key) || (x.contains(key) && x.at(key) != y.at(key))) {
        out.push_back(where + "." + key);
      }
    }
  };
  if (a.at("stage1").size() != b.at("stage1").size()) return {"stage1 row count"};
  for (size_t i = 0; i < a.at("stage1").size(); ++i) {
    cmp(a["stage1"][i], b["stage1"][i], "stage1[" + std::to_string(i) + "]");
  }
  for (const auto& [name, rec] : a.at("baselines").items()) {
    if (!b.at("baselines").contains(name)) {
      out.push_back("baselines." + name + " missing");
      continue;
    }
    cmp(rec, b["baselines"][name], "baselines." + name);
  }
  cmp(a.at("student"), b.at("student"), "student");
  if (a.at("config_hash") != b.at("config_hash")) out.push_back("config_hash");
  return out;
}

}  // namespace fixture
