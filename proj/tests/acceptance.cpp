// Acceptance checks 1-12. One PASS/FAIL line per criterion; exit status 1 on any FAIL.
//
//   acceptance [--config configs/acceptance.yaml] [--output DIR] [--only N]
//
// The end-to-end run (11, 12) resumes from DIR when it already holds a run of the
// same config, so repeated invocations do not retrain.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "auxseg/distill.hpp"
#include "auxseg/experiment.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace auxseg;
namespace fs = std::filesystem;

namespace {

constexpr double kOracleTol = 1e-5;
constexpr double kGradTol = 1e-3;
constexpr double kAffineTol = 1e-9;
constexpr double kConventionalFloor = 0.5;
constexpr double kStudentVsConventional = 0.02;
constexpr double kStudentVsWorstTeacher = 0.01;

using Failures = std::vector<std::string>;

void require(Failures& f, bool ok, const std::string& what) {
  if (!ok) f.push_back(what);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// 1
Failures sdm_exact() {
  Failures f;
  Rng rng(20240101);
  int checked = 0;
  while (checked < 100) {
    const double p = rng.uniform(0.1, 0.9);
    std::vector<int> m(256);
    for (auto& v : m) v = rng.bernoulli(p) ? 1 : 0;
    const int fg = std::accumulate(m.begin(), m.end(), 0);
    if (fg == 0 || fg == 256) continue;
    auto t = torch::zeros({16, 16});
    for (int i = 0; i < 256; ++i) t.view(-1)[i] = static_cast<float>(m[i]);
    for (bool in : {true, false}) {
      const auto got = sdm(t, in ? SdmDirection::In : SdmDirection::Out).contiguous();
      const auto want = oracle::sdm(m, 16, 16, in);
      const float* g = got.data_ptr<float>();
      for (size_t i = 0; i < want.size(); ++i) {
        if (g[i] != want[i]) {
          f.push_back("mask " + std::to_string(checked) + (in ? " in" : " out") + " pixel " + std::to_string(i));
          return f;
        }
      }
    }
    ++checked;
  }
  return f;
}

// 2
Failures loss_oracles() {
  Failures f;
  torch::manual_seed(11);
  for (int i = 0; i < 5; ++i) {
    const auto p = torch::rand({2, 1, 6, 6}, torch::kFloat64);
    const auto t = (torch::rand({2, 1, 6, 6}, torch::kFloat64) > 0.5).to(torch::kFloat64);
    double want = 0;
    for (int b = 0; b < 2; ++b) want += oracle::soft_dice(oracle::flat(p[b]), oracle::flat(t[b]), 1.0) / 2;
    require(f, std::abs(soft_dice_loss(p, t).item<double>() - want) <= kOracleTol, "soft dice value");

    const auto q = torch::randn({6, 5}, torch::kFloat64), k = torch::randn({6, 5}, torch::kFloat64);
    require(f, std::abs(moco_loss(q, k, 0.2).item<double>() - oracle::moco(oracle::rows(q), oracle::rows(k), 0.2)) <=
                   kOracleTol,
            "moco value");

    const auto a = torch::randn({8, 4}, torch::kFloat64), b = torch::randn({8, 4}, torch::kFloat64);
    const auto got = vicreg_loss(a, b);
    const auto o = oracle::vicreg(oracle::rows(a), oracle::rows(b), 1.0, 1e-4);
    require(f,
            std::abs(got.invariance.item<double>() - o.invariance) <= kOracleTol &&
                std::abs(got.variance.item<double>() - o.variance) <= kOracleTol &&
                std::abs(got.covariance.item<double>() - o.covariance) <= kOracleTol,
            "vicreg terms");
  }

  {
    const auto t = torch::rand({4, 4}, torch::kFloat64);
    auto p = torch::rand({4, 4}, torch::kFloat64).requires_grad_(true);
    soft_dice_loss(p, t).backward();
    const auto num_g = oracle::numeric_grad(
        [&](const torch::Tensor& x) { return oracle::soft_dice(oracle::flat(x), oracle::flat(t), 1.0); }, p.detach());
    const double e = oracle::max_rel_error(p.grad(), num_g, 1e-8);
    require(f, e < kGradTol, "soft dice gradient rel err " + std::to_string(e));
  }
  {
    const auto k = torch::randn({4, 3}, torch::kFloat64);
    auto q = torch::randn({4, 3}, torch::kFloat64).requires_grad_(true);
    moco_loss(q, k, 0.5).backward();
    const auto num_g = oracle::numeric_grad(
        [&](const torch::Tensor& x) { return oracle::moco(oracle::rows(x), oracle::rows(k), 0.5); }, q.detach());
    const double e = oracle::max_rel_error(q.grad(), num_g, 1e-6);
    require(f, e < kGradTol, "moco gradient rel err " + std::to_string(e));
  }
  {
    const auto b = torch::randn({6, 3}, torch::kFloat64);
    auto a = (0.3 * torch::randn({6, 3}, torch::kFloat64)).requires_grad_(true);
    vicreg_loss(a, b).total.backward();
    const auto num_g = oracle::numeric_grad(
        [&](const torch::Tensor& x) {
          const auto o = oracle::vicreg(oracle::rows(x), oracle::rows(b), 1.0, 1e-4);
          return 25 * o.invariance + 25 * o.variance + o.covariance;
        },
        a.detach());
    const double e = oracle::max_rel_error(a.grad(), num_g, 1e-6);
    require(f, e < kGradTol, "vicreg gradient rel err " + std::to_string(e));
  }
  return f;
}

// 3
Failures student_affine() {
  Failures f;
  torch::manual_seed(12);
  const auto s = torch::rand({3, 1, 8, 8}, torch::kFloat64);
  const auto gt = (torch::rand({3, 1, 8, 8}, torch::kFloat64) > 0.5).to(torch::kFloat64);
  const auto ens = torch::rand({3, 1, 8, 8}, torch::kFloat64);
  const double gt_only = soft_dice_loss(s, gt).item<double>();
  const double ens_only = soft_dice_loss(s, ens).item<double>();
  require(f, student_loss(s, gt, ens, 0.0).total.item<double>() == gt_only, "lambda 0 is not the ground-truth loss");
  require(f, student_loss(s, gt, ens, 1.0).total.item<double>() == ens_only, "lambda 1 is not the ensemble loss");
  for (double lam : {0.0, 0.25, 0.5, 0.83, 1.0}) {
    const double got = student_loss(s, gt, ens, lam).total.item<double>();
    require(f, std::abs(got - ((1 - lam) * gt_only + lam * ens_only)) <= kAffineTol, "affine at " + num(lam));
  }
  return f;
}

// 4
Failures rkb_bijection() {
  Failures f;
  const auto perms = rkb_permutations(2, 2, 24, 0);
  require(f, perms.size() == 24, "expected 24 permutations");
  require(f, std::set<Permutation>(perms.begin(), perms.end()).size() == 24, "permutations not distinct");
  torch::manual_seed(13);
  const auto img = torch::rand({8, 8});
  const auto original = partition_patches(img, 2, 2);
  std::set<int64_t> labels;
  for (int64_t i = 0; i < static_cast<int64_t>(perms.size()); ++i) {
    const auto ex = rkb_make_example(img, 2, 2, i, perms);
    labels.insert(ex.label);
    require(f, ex.label == i, "label " + std::to_string(i) + " decoded as " + std::to_string(ex.label));
    require(f, torch::equal(permute_patches(ex.patches, invert(perms[ex.label])), original),
            "round trip of permutation " + std::to_string(i));
  }
  require(f, labels.size() == 24, "labels not a bijection");
  return f;
}

// 5
Failures ensemble_properties() {
  Failures f;
  torch::manual_seed(14);
  const auto x = torch::rand({2, 1, 32, 32});
  std::vector<ModelBundle> teachers;
  for (uint64_t i = 0; i < 4; ++i) teachers.push_back(build_model(ArchConfig::desk(), {}, 500 + i));
  const auto ens = teacher_ensemble(teachers, x);
  std::vector<ModelBundle> shuffled{teachers[2], teachers[0], teachers[3], teachers[1]};
  require(f, torch::equal(ens, teacher_ensemble(shuffled, x)), "teacher order changes the ensemble");
  std::vector<ModelBundle> same(3, teachers[1]);
  require(f, torch::allclose(teacher_ensemble(same, x), teachers[1]->segment(x).detach(), 0, 1e-7),
          "ensemble of one repeated teacher differs from it");

  std::vector<ProbabilityMap> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(torch::rand({8, 8}));
  auto reversed = maps;
  std::reverse(reversed.begin(), reversed.end());
  require(f, torch::equal(ensemble_average(maps), ensemble_average(reversed)), "ensemble_average order");
  std::vector<ProbabilityMap> repeated(4, maps[0]);
  require(f, torch::equal(ensemble_average(repeated), maps[0]), "ensemble_average idempotence");
  return f;
}

// 6
Failures mode_selection() {
  Failures f;
  std::vector<std::string> tasks(kTaskNames.begin(), kTaskNames.end());
  const std::map<std::string, std::pair<double, double>> scores{
      {"sdm_in", {0.70, 0.65}}, {"sdm_out", {0.60, 0.72}}, {"rkb", {0.55, 0.55}},
      {"moco", {0.41, 0.40}},   {"vicreg", {0.30, 0.31}}};
  auto stub = [&](const std::string& task, TrainingMode mode) {
    ModeRun run;
    run.model = build_model(ArchConfig::desk(), {}, 0);
    const auto [j, p] = scores.at(task);
    run.val_dice = mode == TrainingMode::Joint ? j : p;
    return run;
  };
  for (const auto& r : run_stage1(tasks, stub, 2)) {
    const auto [j, p] = scores.at(r.task_name);
    const auto want = p > j ? TrainingMode::Pretrain : TrainingMode::Joint;
    require(f, r.chosen_mode == want, r.task_name + " chose " + to_string(r.chosen_mode));
  }
  return f;
}

// 7
Failures zero_weight_joint() {
  Failures f;
  const auto splits = fixture::tiny_splits();
  auto cfg = fixture::fast_config();
  cfg.trace_parameters = true;
  cfg.default_aux_weight = 0.0;
  const auto conv = train_conventional(splits, ArchConfig::desk(), cfg);
  for (const char* name : kTaskNames) {
    TaskList tasks;
    tasks.push_back(make_task(name, TaskContext{}));
    const auto joint = train_joint(splits, tasks, ArchConfig::desk(), cfg);
    bool same = joint.history.size() == conv.history.size();
    for (size_t i = 0; same && i < conv.history.size(); ++i) {
      same = *joint.history[i].trunk_checksum == *conv.history[i].trunk_checksum &&
             *joint.history[i].seg_head_checksum == *conv.history[i].seg_head_checksum;
    }
    require(f, same, std::string(name) + " trajectory differs");
  }
  return f;
}

// 8
Failures transfer() {
  Failures f;
  const auto splits = fixture::tiny_splits();
  const auto cfg = fixture::fast_config();
  for (const char* name : kTaskNames) {
    TaskList tasks;
    tasks.push_back(make_task(name, TaskContext{}));
    const auto pre = pretrain_auxiliary(splits, tasks, ArchConfig::desk(), cfg);
    const auto fine = finetune(splits, pre.model, cfg);
    require(f, fine.initial_trunk_checksum == parameter_checksum(pre.model->shared_parameters()),
            std::string(name) + ": fine-tune trunk does not start from pre-training");

    auto fresh = build_model(ArchConfig::desk(), {}, derive_seed(cfg.seed, "finetune-model"));
    const auto fresh_head = parameter_checksum(fresh->head_parameters(kSegHead));
    auto moved = transfer_shared(pre.model, fresh);
    require(f, parameter_checksum(moved->head_parameters(kSegHead)) == fresh_head,
            std::string(name) + ": segmentation head not fresh");
    require(f, fresh_head != parameter_checksum(pre.model->head_parameters(kSegHead)),
            std::string(name) + ": segmentation head equals the pre-trained one");
    require(f, !fine.model->has_head(name), std::string(name) + ": auxiliary head carried into fine-tuning");
  }
  return f;
}

// 9
Failures checkpoint_and_resume() {
  Failures f;
  const auto root = fs::temp_directory_path() / "auxseg_acceptance_resume";
  fs::remove_all(root);

  std::vector<HeadSpec> heads;
  for (const char* n : kTaskNames) heads.push_back(make_task(n, TaskContext{})->head_spec());
  auto m = build_model(ArchConfig::desk(), heads, 9);
  fs::create_directories(root);
  save_checkpoint(m, root / "m.ckpt");
  auto back = load_checkpoint(root / "m.ckpt");
  const auto a = m->parameters(), b = back->parameters();
  bool same = a.size() == b.size() && back->head_names() == m->head_names();
  for (size_t i = 0; same && i < a.size(); ++i) same = torch::equal(a[i], b[i]);
  require(f, same, "checkpoint round trip changed parameters");

  auto whole = parse_config(fixture::tiny_experiment_yaml((root / "whole").string()));
  const auto reference = run_experiment(whole, RunOptions{});
  auto parts = whole;
  parts.output_dir = root / "parts";
  RunOptions stop;
  stop.stop_after = "stage1";
  run_experiment(parts, stop);
  RunOptions resume;
  resume.resume = true;
  const auto resumed = run_experiment(parts, resume);
  for (const auto& d : fixture::dice_differences(resumed, reference)) f.push_back("resumed run differs at " + d);
  fs::remove_all(root);
  return f;
}

// 10
Failures lr_schedule() {
  Failures f;
  const auto splits = fixture::tiny_splits();
  auto cfg = fixture::fast_config();
  cfg.steps = 6;
  require(f, TrainConfig{}.lr0 == 0.001, "default lr0 is not 0.001");
  require(f, TrainConfig{}.power == 0.9, "default power is not 0.9");
  const auto r = train_conventional(splits, ArchConfig::desk(), cfg);
  for (const auto& e : r.history) {
    const double want = cfg.lr0 * std::pow(1.0 - static_cast<double>(e.step) / cfg.steps, 0.9);
    require(f, std::abs(e.lr - want) <= 1e-15 * cfg.lr0, "step " + std::to_string(e.step) + " lr " + std::to_string(e.lr));
  }
  return f;
}

struct EndToEnd {
  nlohmann::json report;
  std::string error;
  double seconds = 0;
};

EndToEnd run_end_to_end(const fs::path& config, const fs::path& output) {
  EndToEnd out;
  const auto start = std::chrono::steady_clock::now();
  try {
    auto cfg = load_config(config);
    cfg.output_dir = output;
    RunOptions opts;
    opts.log = &std::cerr;
    opts.resume = fs::exists(output / "config.json");
    out.report = run_experiment(cfg, opts);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// 11
Failures desk_scale(const EndToEnd& e2e, std::string& note) {
  Failures f;
  if (!e2e.error.empty()) return {"pipeline failed: " + e2e.error};
  const auto& r = e2e.report;
  const double conv = r.at("baselines").at("conventional").at("test_dice");
  const double student = r.at("student").at("test_dice");
  double worst = 1.0;
  for (const auto& row : r.at("stage1")) worst = std::min(worst, row.at("test_dice").get<double>());
  require(f, r.at("stage1").size() == 5, "stage 1 did not cover 5 tasks");
  require(f, conv > kConventionalFloor, "conventional test Dice " + num(conv) + " <= " + num(kConventionalFloor));
  require(f, student >= conv - kStudentVsConventional,
          "student " + num(student) + " < conventional " + num(conv) + " - " + num(kStudentVsConventional));
  require(f, student >= worst - kStudentVsWorstTeacher,
          "student " + num(student) + " < worst teacher " + num(worst) + " - " + num(kStudentVsWorstTeacher));
  note = "conventional " + num(conv) + ", student " + num(student) + ", worst teacher " + num(worst) +
         (student > conv ? ", student > conventional" : ", student <= conventional (not asserted)") + ", " +
         num(e2e.seconds) + " s";
  return f;
}

// 12
Failures report_shape(const EndToEnd& e2e) {
  Failures f;
  if (!e2e.error.empty()) return {"pipeline failed: " + e2e.error};
  const auto& r = e2e.report;
  std::set<std::string> seen;
  for (const auto& row : r.at("stage1")) {
    seen.insert(row.at("task").get<std::string>());
    for (const char* k : {"val_dice_joint", "val_dice_pretrain", "chosen_mode"})
      require(f, row.contains(k), row.at("task").get<std::string>() + " lacks " + k);
    const auto mode = training_mode_from_string(row.at("chosen_mode"));
    require(f, mode == select_mode(row.at("val_dice_joint"), row.at("val_dice_pretrain")),
            row.at("task").get<std::string>() + " selection disagrees with its scores");
  }
  require(f, seen == std::set<std::string>(kTaskNames.begin(), kTaskNames.end()), "stage 1 task set");
  for (const char* b : kBaselineNames)
    require(f, r.at("baselines").contains(b) && r["baselines"][b].contains("test_dice"), std::string("row ") + b);
  require(f, r.contains("student") && r["student"].contains("test_dice"), "row ours");
  const auto text = format_report(r);
  for (const char* label : {"conventional", "joint_all", "mt_pretrain", "ensemble", "ours (student)"})
    require(f, text.find(label) != std::string::npos, std::string("formatted report lacks ") + label);
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  fs::path config = fs::path(AUXSEG_SOURCE_DIR) / "configs" / "acceptance.yaml";
  fs::path output = fs::temp_directory_path() / "auxseg_acceptance_run";
  int only = 0;
  app.add_option("--config", config);
  app.add_option("--output", output);
  app.add_option("--only", only)->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  std::vector<std::pair<std::string, std::function<Failures(std::string&)>>> criteria{
      {"SDM equals brute-force search", [](std::string&) { return sdm_exact(); }},
      {"loss oracles and gradients", [](std::string&) { return loss_oracles(); }},
      {"student loss affine in lambda", [](std::string&) { return student_affine(); }},
      {"RKB round trip over 24 permutations", [](std::string&) { return rkb_bijection(); }},
      {"ensemble invariance and idempotence", [](std::string&) { return ensemble_properties(); }},
      {"mode selection", [](std::string&) { return mode_selection(); }},
      {"zero-weight joint equals conventional", [](std::string&) { return zero_weight_joint(); }},
      {"trunk transfer", [](std::string&) { return transfer(); }},
      {"checkpoint round trip and resume", [](std::string&) { return checkpoint_and_resume(); }},
      {"poly learning rate", [](std::string&) { return lr_schedule(); }},
  };
  std::optional<EndToEnd> e2e;
  auto end_to_end = [&]() -> const EndToEnd& {
    if (!e2e) e2e = run_end_to_end(config, output);
    return *e2e;
  };
  criteria.emplace_back("desk-scale pipeline", [&](std::string& note) { return desk_scale(end_to_end(), note); });
  criteria.emplace_back("report table shape", [&](std::string&) { return report_shape(end_to_end()); });

  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && only != static_cast<int>(i + 1)) continue;
    std::string note;
    Failures f;
    try {
      f = criteria[i].second(note);
    } catch (const std::exception& e) {
      f = {std::string("exception: ") + e.what()};
    }
    std::ostringstream line;
    line << "criterion " << (i + 1) << ": " << (f.empty() ? "PASS" : "FAIL") << "  " << criteria[i].first;
    if (!note.empty()) line << " (" << note << ")";
    for (size_t k = 0; k < std::min<size_t>(f.size(), 3); ++k) line << "\n    " << f[k];
    if (f.size() > 3) line << "\n    ... " << f.size() - 3 << " more";
    std::cout << line.str() << std::endl;
    failed += !f.empty();
  }
  return failed == 0 ? 0 : 1;
}
