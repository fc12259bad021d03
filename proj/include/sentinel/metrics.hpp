#pragma once

#include <array>
#include <filesystem>
#include <vector>

namespace sentinel::metrics {

/// 2x2 counts, rows = true class, columns = predicted class (0 real, 1 fake).
struct ConfusionMatrix {
  std::array<std::array<long long, 2>, 2> counts = {{{0, 0}, {0, 0}}};

  long long total() const {
    return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
  }
  long long trace() const { return counts[0][0] + counts[1][1]; }
};

struct MacroScores {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::array<double, 2> precision_per_class = {0, 0};
  std::array<double, 2> recall_per_class = {0, 0};
  std::array<double, 2> f1_per_class = {0, 0};
};

ConfusionMatrix confusion(const std::vector<int>& preds,
                          const std::vector<int>& labels);

/// trace/total; throws ValidationError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

/// Per-class precision/recall/F1 with the 0/0 -> 0 convention, macro-averaged
/// without class weighting.
MacroScores prf_macro(const ConfusionMatrix& cm);

/// report.json: accuracy, macro scores and the raw confusion counts.
void save_report(const ConfusionMatrix& cm,
                 const std::filesystem::path& path);

}  // namespace sentinel::metrics
