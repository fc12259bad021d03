#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "sentinel/trainer.hpp"

namespace sentinel::report {

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::array<float, 3> color = {0.2f, 0.4f, 0.8f};
};

struct Panel {
  std::string title;
  std::vector<Series> series;
};

std::vector<train::EpochMetrics> load_metrics_jsonl(
    const std::filesystem::path& path);

/// Three panels per run: loss, accuracy, and the macro scores, each with
/// train and val series.
std::vector<Panel> build_curve_panels(
    const std::vector<train::EpochMetrics>& history);

void render_panels(const std::vector<Panel>& panels,
                   const std::filesystem::path& png_path, int panel_w = 420,
                   int panel_h = 340);

void write_summary(const std::vector<train::EpochMetrics>& history,
                   const std::filesystem::path& md_path);

/// curves.png + summary.md from run_dir/metrics.jsonl.
void render_report(const std::filesystem::path& run_dir);

}  // namespace sentinel::report
