#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sentinel/data.hpp"
#include "sentinel/metrics.hpp"
#include "sentinel/model.hpp"
#include "sentinel/transforms.hpp"

namespace sentinel::train {

enum class Monitor { val_loss, val_accuracy };

const char* monitor_name(Monitor m);
Monitor monitor_from_name(const std::string& s);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int patience = 3;
  double factor = 0.5;
  double min_lr = 1e-7;
  Monitor monitor = Monitor::val_loss;
  double threshold = 1e-4;  // improvement epsilon
  uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;
  std::filesystem::path metrics_path;  // metrics.jsonl; empty disables logging

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0;
  double accuracy = 0;
  double precision_macro = 0;
  double recall_macro = 0;
  double f1_macro = 0;
  double lr = 0;
};

/// Plateau scheduler state. `best` is empty until the first observation.
struct PlateauState {
  std::optional<double> best;
  int bad_epochs = 0;
  double lr = 0;
};

/// Mean of -log softmax(logits)[label] over the batch, computed with a
/// log-sum-exp so large logits stay finite.
double cross_entropy(const nn::Mat& logits, const std::vector<int>& labels);

/// One scheduler observation. Improvement means beating `best` by more than
/// cfg.threshold (lower is better for val_loss, higher for val_accuracy).
/// After more than cfg.patience consecutive non-improving observations the
/// rate decays by cfg.factor down to cfg.min_lr.
PlateauState plateau_step(PlateauState state, double monitored,
                          const TrainConfig& cfg);

struct DataSplit {
  std::vector<data::ImageRecord> records;
  std::filesystem::path root;
};

DataSplit split_of(const data::DatasetManifest& manifest, data::Split s);

struct CheckpointMeta {
  model::ModelSpec spec;
  int epoch = 0;
  double best_val_accuracy = 0;
  uint64_t seed = 0;
};

void save_checkpoint(const model::Classifier& model,
                     const std::filesystem::path& base,
                     const CheckpointMeta& meta);
/// Accepts the sidecar .json path, the base path without extension, or a
/// directory containing checkpoint_best.json.
std::pair<model::Classifier, CheckpointMeta> load_checkpoint(
    const std::filesystem::path& path);

/// Called after each epoch with the train and val rows; returning false ends
/// the run early (the default always continues).
using EpochCallback =
    std::function<bool(const EpochMetrics&, const EpochMetrics&)>;

struct FitResult {
  std::vector<EpochMetrics> history;
  std::filesystem::path best_checkpoint;
  double best_val_accuracy = 0;
  int epochs_run = 0;
};

/// The training loop: seeded shuffles, augmented mini-batches, Adam on the
/// trainable parameters, full validation passes, plateau decay on the
/// monitored metric and a checkpoint whenever validation accuracy improves.
/// Bitwise reproducible for a fixed seed on one machine.
FitResult fit(model::Classifier& model, const DataSplit& train_data,
              const DataSplit& val_data, const TrainConfig& cfg,
              const tf::TransformConfig& tcfg, bool resume = false,
              const EpochCallback& callback = {});

std::pair<EpochMetrics, metrics::ConfusionMatrix> evaluate(
    const model::Classifier& model, const DataSplit& data_split,
    const tf::TransformConfig& tcfg, int batch_size = 32);

/// Classic Adam with the L2 term folded into the gradient.
class Adam {
 public:
  Adam(std::vector<nn::Param> params, double lr, double weight_decay);

  void step(const model::GradBuffers& grads);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long long steps() const { return t_; }

  // Moment buffers exposed for checkpoint resume.
  std::vector<std::vector<float>>& m() { return m_; }
  std::vector<std::vector<float>>& v() { return v_; }
  void set_steps(long long t) { t_ = t; }

 private:
  std::vector<nn::Param> params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, wd_;
  long long t_ = 0;
};

}  // namespace sentinel::train
