#include <cstdio>
#include <sstream>

#include "auxseg/experiment.hpp"

namespace auxseg {
namespace {

std::string pct(const nlohmann::json& v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v.get<double>());
  return buf;
}

std::string pad(std::string s, size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string format_report(const nlohmann::json& report) {
  std::ostringstream out;
  out << "experiment " << report.at("config_hash").get<std::string>() << ", seed "
      << report.at("seeds").at("experiment") << ", lambda_kd " << report.at("lambda_kd") << "\n";
  const auto& sizes = report.at("split_sizes");
  out << "split " << sizes.at("train") << "/" << sizes.at("val") << "/" << sizes.at("test") << "\n\n";

  out << "Stage 1: Dice (%) per auxiliary task\n";
  out << pad("task", 10) << pad("val joint", 12) << pad("val pretrain", 14) << pad("chosen", 10) << "test\n";
  for (const auto& row : report.at("stage1")) {
    out << pad(row.at("task").get<std::string>(), 10) << pad(pct(row.at("val_dice_joint")), 12)
        << pad(pct(row.at("val_dice_pretrain")), 14) << pad(row.at("chosen_mode").get<std::string>(), 10)
        << pct(row.at("test_dice")) << "\n";
  }

  out << "\nTest Dice (%)\n";
  const auto& baselines = report.at("baselines");
  for (const char* name : kBaselineNames) {
    if (baselines.contains(name)) out << pad(name, 16) << pct(baselines.at(name).at("test_dice")) << "\n";
  }
  out << pad("ours (student)", 16) << pct(report.at("student").at("test_dice")) << "\n";

  out << "\nWall clock (s)\n";
  for (const auto& [phase, s] : report.at("wall_clock_seconds").items()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", s.get<double>());
    out << pad(phase, 28) << buf << "\n";
  }
  return out.str();
}

}  // namespace auxseg
