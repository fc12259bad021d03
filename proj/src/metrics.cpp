#include "sentinel/metrics.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "sentinel/core.hpp"

namespace sentinel::metrics {

ConfusionMatrix confusion(const std::vector<int>& preds,
                          const std::vector<int>& labels) {
  if (preds.size() != labels.size()) {
    throw ValidationError("confusion: preds and labels differ in length");
  }
  ConfusionMatrix cm;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] > 1 || labels[i] < 0 || labels[i] > 1) {
      throw ValidationError("confusion: class index out of range");
    }
    cm.counts[static_cast<size_t>(labels[i])][static_cast<size_t>(preds[i])]++;
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const long long n = cm.total();
  if (n == 0) throw ValidationError("accuracy undefined on an empty matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

MacroScores prf_macro(const ConfusionMatrix& cm) {
  if (cm.total() == 0) {
    throw ValidationError("macro metrics undefined on an empty matrix");
  }
  MacroScores s;
  for (size_t c = 0; c < 2; ++c) {
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double col = static_cast<double>(cm.counts[0][c] + cm.counts[1][c]);
    const double row = static_cast<double>(cm.counts[c][0] + cm.counts[c][1]);
    const double p = col > 0 ? tp / col : 0.0;
    const double r = row > 0 ? tp / row : 0.0;
    const double f = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
    s.precision_per_class[c] = p;
    s.recall_per_class[c] = r;
    s.f1_per_class[c] = f;
  }
  s.precision = (s.precision_per_class[0] + s.precision_per_class[1]) / 2.0;
  s.recall = (s.recall_per_class[0] + s.recall_per_class[1]) / 2.0;
  s.f1 = (s.f1_per_class[0] + s.f1_per_class[1]) / 2.0;
  return s;
}

void save_report(const ConfusionMatrix& cm,
                 const std::filesystem::path& path) {
  MacroScores s = prf_macro(cm);
  nlohmann::ordered_json j;
  j["accuracy"] = accuracy(cm);
  j["precision_macro"] = s.precision;
  j["recall_macro"] = s.recall;
  j["f1_macro"] = s.f1;
  j["confusion"] = {{cm.counts[0][0], cm.counts[0][1]},
                    {cm.counts[1][0], cm.counts[1][1]}};
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write report: " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace sentinel::metrics
