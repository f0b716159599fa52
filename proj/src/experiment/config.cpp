#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "auxseg/experiment.hpp"

namespace auxseg {
namespace {

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& msg) : std::invalid_argument("config: " + msg) {}
};

void check_keys(const YAML::Node& node, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      std::string list;
      for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
      throw ConfigError("unknown key '" + key + "' in " + where + " (allowed: " + list + ")");
    }
  }
}

template <class T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  const auto v = node[key];
  if (!v) return;
  try {
    out = v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where + "." + key + ": cannot parse '" + YAML::Dump(v) + "'");
  }
}

void read_range(const YAML::Node& node, const char* key, std::array<double, 2>& out, const std::string& where) {
  const auto v = node[key];
  if (!v) return;
  if (!v.IsSequence() || v.size() != 2) throw ConfigError(where + "." + key + " must be a [lo, hi] pair");
  try {
    out = {v[0].as<double>(), v[1].as<double>()};
  } catch (const YAML::Exception&) {
    throw ConfigError(where + "." + key + ": expected two numbers");
  }
}

SyntheticDataConfig parse_synthetic(const YAML::Node& n) {
  const std::string w = "data.synthetic";
  check_keys(n, {"count", "height", "width", "min_shapes", "max_shapes", "noise_std", "min_intensity",
                 "max_intensity", "seed"},
             w);
  SyntheticDataConfig s;
  read(n, "count", s.count, w);
  read(n, "height", s.height, w);
  read(n, "width", s.width, w);
  read(n, "min_shapes", s.min_shapes, w);
  read(n, "max_shapes", s.max_shapes, w);
  read(n, "noise_std", s.noise_std, w);
  read(n, "min_intensity", s.min_intensity, w);
  read(n, "max_intensity", s.max_intensity, w);
  read(n, "seed", s.seed, w);
  return s;
}

DataSection parse_data(const YAML::Node& n, const std::filesystem::path& base) {
  check_keys(n, {"synthetic", "directory", "split", "split_seed"}, "data");
  DataSection d;
  if (n["synthetic"]) d.synthetic = parse_synthetic(n["synthetic"]);
  if (n["directory"]) {
    std::filesystem::path p = n["directory"].as<std::string>();
    d.directory = p.is_absolute() ? p : base / p;
  }
  if (const auto s = n["split"]) {
    if (!s.IsSequence() || s.size() != 3) throw ConfigError("data.split must list three fractions [train, val, test]");
    for (size_t i = 0; i < 3; ++i) d.split[i] = s[i].as<double>();
  }
  read(n, "split_seed", d.split_seed, "data");
  return d;
}

AugmentationConfig parse_augmentation(const YAML::Node& n) {
  const std::string w = "augmentation";
  check_keys(n, {"translate_fraction", "zoom", "rotation", "noise_std", "blur_sigma", "brightness", "contrast",
                 "gamma", "p_translate", "p_zoom", "p_rotate", "p_noise", "p_blur", "p_brightness",
                 "p_contrast", "p_gamma", "enabled"},
             w);
  AugmentationConfig a;
  if (n["enabled"] && !n["enabled"].as<bool>()) a = AugmentationConfig::disabled();
  read(n, "translate_fraction", a.translate_fraction, w);
  read_range(n, "zoom", a.zoom, w);
  read_range(n, "rotation", a.rotation, w);
  read_range(n, "noise_std", a.noise_std, w);
  read_range(n, "blur_sigma", a.blur_sigma, w);
  read_range(n, "brightness", a.brightness, w);
  read_range(n, "contrast", a.contrast, w);
  read_range(n, "gamma", a.gamma, w);
  read(n, "p_translate", a.p_translate, w);
  read(n, "p_zoom", a.p_zoom, w);
  read(n, "p_rotate", a.p_rotate, w);
  read(n, "p_noise", a.p_noise, w);
  read(n, "p_blur", a.p_blur, w);
  read(n, "p_brightness", a.p_brightness, w);
  read(n, "p_contrast", a.p_contrast, w);
  read(n, "p_gamma", a.p_gamma, w);
  return a;
}

void parse_train(const YAML::Node& n, TrainConfig& t) {
  const std::string w = "train";
  check_keys(n, {"batch_size", "lr0", "power", "steps", "pretrain_steps", "val_every", "eval_batch_size",
                 "beta1", "beta2", "eps", "weight_decay", "aux_weights", "default_aux_weight"},
             w);
  read(n, "batch_size", t.batch_size, w);
  read(n, "lr0", t.lr0, w);
  read(n, "power", t.power, w);
  read(n, "steps", t.steps, w);
  read(n, "pretrain_steps", t.pretrain_steps, w);
  read(n, "val_every", t.val_every, w);
  read(n, "eval_batch_size", t.eval_batch_size, w);
  read(n, "beta1", t.optimizer.beta1, w);
  read(n, "beta2", t.optimizer.beta2, w);
  read(n, "eps", t.optimizer.eps, w);
  read(n, "weight_decay", t.optimizer.weight_decay, w);
  read(n, "default_aux_weight", t.default_aux_weight, w);
  if (const auto aw = n["aux_weights"]) {
    if (!aw.IsMap()) throw ConfigError("train.aux_weights must map task names to weights");
    for (const auto& kv : aw) t.aux_weights[kv.first.as<std::string>()] = kv.second.as<double>();
  }
}

std::vector<TaskEntry> parse_tasks(const YAML::Node& n) {
  if (!n.IsSequence()) throw ConfigError("tasks must be a list");
  std::vector<TaskEntry> out;
  for (const auto& item : n) {
    TaskEntry e;
    if (item.IsScalar()) {
      e.name = item.as<std::string>();
    } else if (item.IsMap() && item.size() == 1) {
      const auto kv = *item.begin();
      e.name = kv.first.as<std::string>();
      if (!kv.second.IsNull()) {
        if (!kv.second.IsMap()) throw ConfigError("overrides of task '" + e.name + "' must be a mapping");
        for (const auto& p : kv.second) e.overrides[p.first.as<std::string>()] = p.second.as<double>();
      }
    } else {
      throw ConfigError("each task entry is a name or a single-key mapping {name: {param: value}}");
    }
    out.push_back(std::move(e));
  }
  return out;
}

DistillSection parse_distill(const YAML::Node& n) {
  check_keys(n, {"lambda_kd", "steps", "arch"}, "distill");
  DistillSection d;
  read(n, "lambda_kd", d.lambda_kd, "distill");
  if (n["steps"]) d.steps = n["steps"].as<int64_t>();
  if (n["arch"]) d.arch = n["arch"].as<std::string>();
  return d;
}

}  // namespace

ArchConfig arch_preset(const std::string& name) {
  if (name == "desk") return ArchConfig::desk();
  if (name == "paper") return ArchConfig::paper();
  throw std::invalid_argument("config: unknown arch preset '" + name + "' (expected desk or paper)");
}

ArchConfig ExperimentConfig::arch() const { return auxseg::arch_preset(arch_preset); }

std::vector<std::string> ExperimentConfig::task_names() const {
  std::vector<std::string> out;
  for (const auto& t : tasks) out.push_back(t.name);
  return out;
}

bool ExperimentConfig::wants_baseline(const std::string& name) const {
  return std::find(baselines.begin(), baselines.end(), name) != baselines.end();
}

void ExperimentConfig::validate() const {
  if (data.synthetic.has_value() == data.directory.has_value()) {
    throw std::invalid_argument("config: data needs exactly one of 'synthetic' or 'directory'");
  }
  if (tasks.empty()) throw std::invalid_argument("config: at least one auxiliary task is required");
  std::set<std::string> seen;
  for (const auto& t : tasks) {
    if (!is_registered_task(t.name)) {
      std::string known;
      for (const char* k : kTaskNames) known += std::string(known.empty() ? "" : ", ") + k;
      throw std::invalid_argument("config: unknown task '" + t.name + "' (known: " + known + ")");
    }
    if (!seen.insert(t.name).second) throw std::invalid_argument("config: task '" + t.name + "' listed twice");
    make_task(t.name, TaskContext{train.augmentation, arch().total_stride()}, t.overrides);
  }
  for (const auto& [name, w] : train.aux_weights) {
    if (!seen.count(name)) throw std::invalid_argument("config: aux_weights names unlisted task '" + name + "'");
  }
  for (const auto& b : baselines) {
    if (std::none_of(kBaselineNames.begin(), kBaselineNames.end(), [&](const char* k) { return b == k; })) {
      throw std::invalid_argument("config: unknown baseline '" + b + "'");
    }
  }
  arch().validate();
  if (distill.arch) auxseg::arch_preset(*distill.arch).validate();
  if (distill.steps && *distill.steps <= 0) throw std::invalid_argument("config: distill.steps must be positive");
  train.validate();
  DistillConfig{distill.lambda_kd, std::nullopt, train}.validate(tasks.size());
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed YAML: ") + e.what());
  }
  check_keys(root, {"seed", "output_dir", "arch", "data", "tasks", "train", "augmentation", "distill", "baselines"},
             "top level");
  ExperimentConfig cfg;
  read(root, "seed", cfg.seed, "top level");
  if (root["output_dir"]) {
    std::filesystem::path p = root["output_dir"].as<std::string>();
    cfg.output_dir = p.is_absolute() ? p : base_dir / p;
  } else {
    cfg.output_dir = base_dir / cfg.output_dir;
  }
  read(root, "arch", cfg.arch_preset, "top level");
  if (!root["data"]) throw ConfigError("missing 'data' section");
  cfg.data = parse_data(root["data"], base_dir);
  if (!root["tasks"]) throw ConfigError("missing 'tasks' list");
  cfg.tasks = parse_tasks(root["tasks"]);
  if (root["train"]) parse_train(root["train"], cfg.train);
  if (root["augmentation"]) cfg.train.augmentation = parse_augmentation(root["augmentation"]);
  if (root["distill"]) cfg.distill = parse_distill(root["distill"]);
  if (root["baselines"]) {
    cfg.baselines = root["baselines"].as<std::vector<std::string>>();
  } else {
    cfg.baselines.assign(kBaselineNames.begin(), kBaselineNames.end());
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  using nlohmann::json;
  json data;
  if (cfg.data.synthetic) {
    const auto& s = *cfg.data.synthetic;
    data["synthetic"] = {{"count", s.count},           {"height", s.height},
                         {"width", s.width},           {"min_shapes", s.min_shapes},
                         {"max_shapes", s.max_shapes}, {"noise_std", s.noise_std},
                         {"min_intensity", s.min_intensity}, {"max_intensity", s.max_intensity},
                         {"seed", s.seed}};
  }
  if (cfg.data.directory) data["directory"] = cfg.data.directory->string();
  data["split"] = cfg.data.split;
  data["split_seed"] = cfg.data.split_seed;

  json tasks = json::array();
  for (const auto& t : cfg.tasks) tasks.push_back({{"name", t.name}, {"overrides", t.overrides}});

  const auto& t = cfg.train;
  const auto& a = t.augmentation;
  json train = {{"batch_size", t.batch_size},
                {"lr0", t.lr0},
                {"power", t.power},
                {"steps", t.steps},
                {"pretrain_steps", t.pretrain_steps},
                {"val_every", t.val_every},
                {"eval_batch_size", t.eval_batch_size},
                {"beta1", t.optimizer.beta1},
                {"beta2", t.optimizer.beta2},
                {"eps", t.optimizer.eps},
                {"weight_decay", t.optimizer.weight_decay},
                {"aux_weights", t.aux_weights},
                {"default_aux_weight", t.default_aux_weight}};
  json aug = {{"translate_fraction", a.translate_fraction},
              {"zoom", a.zoom},
              {"rotation", a.rotation},
              {"noise_std", a.noise_std},
              {"blur_sigma", a.blur_sigma},
              {"brightness", a.brightness},
              {"contrast", a.contrast},
              {"gamma", a.gamma},
              {"p", {a.p_translate, a.p_zoom, a.p_rotate, a.p_noise, a.p_blur, a.p_brightness, a.p_contrast,
                     a.p_gamma}}};
  json distill = {{"lambda_kd", cfg.distill.lambda_kd}};
  if (cfg.distill.steps) distill["steps"] = *cfg.distill.steps;
  if (cfg.distill.arch) distill["arch"] = *cfg.distill.arch;

  return json{{"seed", cfg.seed}, {"arch", cfg.arch_preset}, {"data", data},         {"tasks", tasks},
              {"train", train},   {"augmentation", aug},     {"distill", distill}, {"baselines", cfg.baselines}};
}

std::string config_hash(const ExperimentConfig& cfg) {
  const auto text = config_to_json(cfg).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Sample> load_samples(const DataSection& data) {
  if (data.synthetic) return generate_synthetic(*data.synthetic);
  if (data.directory) return load_directory(*data.directory);
  throw std::invalid_argument("data section has no source");
}

DatasetSplits load_splits(const DataSection& data) {
  const auto samples = load_samples(data);
  return split(samples, data.split, data.split_seed);
}

}  // namespace auxseg
