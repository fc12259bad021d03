#include "sentinel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sentinel/runconfig.hpp"

namespace fs = std::filesystem;

namespace sentinel::train {

using nn::Mat;
using nn::Vec;

const char* monitor_name(Monitor m) {
  return m == Monitor::val_loss ? "val_loss" : "val_accuracy";
}

Monitor monitor_from_name(const std::string& s) {
  if (s == "val_loss") return Monitor::val_loss;
  if (s == "val_accuracy") return Monitor::val_accuracy;
  throw ValidationError("unknown monitor: " + s);
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ValidationError("epochs must be positive");
  if (batch_size <= 0) throw ValidationError("batch_size must be positive");
  if (lr <= 0) throw ValidationError("lr must be positive");
  if (weight_decay < 0) throw ValidationError("weight_decay must be >= 0");
  if (patience < 0) throw ValidationError("patience must be >= 0");
  if (factor <= 0 || factor >= 1) {
    throw ValidationError("factor must be in (0, 1)");
  }
  if (min_lr < 0) throw ValidationError("min_lr must be >= 0");
  if (threshold < 0) throw ValidationError("threshold must be >= 0");
}

double cross_entropy(const Mat& logits, const std::vector<int>& labels) {
  if (logits.rows() == 0) {
    throw ValidationError("cross_entropy on an empty batch");
  }
  if (static_cast<size_t>(logits.rows()) != labels.size()) {
    throw ValidationError("cross_entropy: logits/labels length mismatch");
  }
  double total = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<size_t>(r)];
    if (y < 0 || y >= logits.cols()) {
      throw ValidationError("cross_entropy: label out of range");
    }
    double mx = logits.row(r).maxCoeff();
    double sum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      sum += std::exp(static_cast<double>(logits(r, c)) - mx);
    }
    total += mx + std::log(sum) - logits(r, y);
  }
  return total / static_cast<double>(logits.rows());
}

PlateauState plateau_step(PlateauState state, double monitored,
                          const TrainConfig& cfg) {
  if (!std::isfinite(monitored)) {
    throw ValidationError("plateau_step requires a finite monitored value");
  }
  const bool minimize = cfg.monitor == Monitor::val_loss;
  bool improved;
  if (!state.best.has_value()) {
    improved = true;
  } else if (minimize) {
    improved = monitored < *state.best - cfg.threshold;
  } else {
    improved = monitored > *state.best + cfg.threshold;
  }
  if (improved) {
    state.best = monitored;
    state.bad_epochs = 0;
  } else {
    state.bad_epochs += 1;
    if (state.bad_epochs > cfg.patience) {
      state.lr = std::max(state.lr * cfg.factor, cfg.min_lr);
      state.bad_epochs = 0;
    }
  }
  return state;
}

DataSplit split_of(const data::DatasetManifest& manifest, data::Split s) {
  return {manifest.split_records(s), manifest.root};
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<nn::Param> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.data->size(), 0.f);
    v_.emplace_back(p.data->size(), 0.f);
  }
}

void Adam::step(const model::GradBuffers& grads) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& theta = *params_[i].data;
    const auto& g_in = grads.g[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < theta.size(); ++j) {
      const double g = static_cast<double>(g_in[j]) + wd_ * theta[j];
      m[j] = static_cast<float>(beta1 * m[j] + (1.0 - beta1) * g);
      v[j] = static_cast<float>(beta2 * v[j] + (1.0 - beta2) * g * g);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] = static_cast<float>(theta[j] - lr_ * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Dataset cache
// ---------------------------------------------------------------------------

namespace {

class ImageCache {
 public:
  explicit ImageCache(const DataSplit& split) : records_(split.records) {
    imgs_.resize(records_.size());
    std::vector<std::string> errors(records_.size());
    parallel_for(static_cast<int>(records_.size()), [&](int i) {
      try {
        imgs_[static_cast<size_t>(i)] =
            load_image(split.root / records_[static_cast<size_t>(i)].path);
      } catch (const std::exception& e) {
        errors[static_cast<size_t>(i)] = e.what();
      }
    });
    for (const auto& e : errors) {
      if (!e.empty()) throw RuntimeFailure(e);
    }
  }

  size_t size() const { return imgs_.size(); }
  ImageF image(size_t i) const { return to_float(imgs_[i]); }
  int label(size_t i) const { return records_[i].label; }

 private:
  std::vector<data::ImageRecord> records_;
  std::vector<ImageU8> imgs_;
};

struct JsonlLogger {
  std::ofstream out;

  explicit JsonlLogger(const fs::path& path, bool append) {
    if (path.empty()) return;
    out.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot open metrics log: " + path.string());
  }

  void log(const EpochMetrics& m) {
    if (!out.is_open()) return;
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["split"] = m.split;
    j["loss"] = m.loss;
    j["accuracy"] = m.accuracy;
    j["precision_macro"] = m.precision_macro;
    j["recall_macro"] = m.recall_macro;
    j["f1_macro"] = m.f1_macro;
    j["lr"] = m.lr;
    out << j.dump() << "\n";
    out.flush();
  }
};

EpochMetrics metrics_row(int epoch, const char* split, double loss,
                         const std::vector<int>& preds,
                         const std::vector<int>& labels, double lr) {
  EpochMetrics m;
  m.epoch = epoch;
  m.split = split;
  m.loss = loss;
  auto cm = metrics::confusion(preds, labels);
  m.accuracy = metrics::accuracy(cm);
  auto s = metrics::prf_macro(cm);
  m.precision_macro = s.precision;
  m.recall_macro = s.recall;
  m.f1_macro = s.f1;
  m.lr = lr;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const model::Classifier& model, const fs::path& base,
                     const CheckpointMeta& meta) {
  model::save_tensor_blob(fs::path(base.string() + ".bin"), model.params());
  cfg::json j;
  j["spec"] = cfg::model_spec_to_json(meta.spec);
  j["epoch"] = meta.epoch;
  j["best_val_accuracy"] = meta.best_val_accuracy;
  j["seed"] = meta.seed;
  std::ofstream out(base.string() + ".json");
  if (!out) {
    throw RuntimeFailure("cannot write checkpoint sidecar: " + base.string());
  }
  out << j.dump(2) << "\n";
}

std::pair<model::Classifier, CheckpointMeta> load_checkpoint(
    const fs::path& path) {
  fs::path sidecar = path;
  if (fs::is_directory(path)) {
    sidecar = path / "checkpoint_best.json";
  } else if (path.extension() != ".json") {
    sidecar = fs::path(path.string() + ".json");
  }
  std::ifstream in(sidecar);
  if (!in) {
    throw RuntimeFailure("cannot open checkpoint sidecar: " +
                         sidecar.string());
  }
  cfg::json j;
  in >> j;
  CheckpointMeta meta;
  meta.spec = cfg::model_spec_from_json(j.at("spec"));
  meta.epoch = j.at("epoch").get<int>();
  meta.best_val_accuracy = j.at("best_val_accuracy").get<double>();
  meta.seed = j.at("seed").get<uint64_t>();

  model::Classifier m = model::Classifier::build(meta.spec, meta.seed);
  fs::path bin = sidecar;
  bin.replace_extension(".bin");
  m.load_params(bin);
  return {std::move(m), meta};
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace {

// Pooled features for a record range under eval preprocessing.
Mat eval_features(const model::Classifier& model, const ImageCache& cache,
                  const tf::TransformConfig& tcfg) {
  Mat feats(static_cast<Eigen::Index>(cache.size()), model.spec().feature_dim());
  parallel_for(static_cast<int>(cache.size()), [&](int i) {
    Chw x = tf::eval_preprocess(cache.image(static_cast<size_t>(i)), tcfg);
    feats.row(i) =
        model.backbone_features_one(x).transpose();
  });
  return feats;
}

}  // namespace

std::pair<EpochMetrics, metrics::ConfusionMatrix> evaluate(
    const model::Classifier& model, const DataSplit& data_split,
    const tf::TransformConfig& tcfg, int batch_size) {
  (void)batch_size;  // the whole pass is feature-parallel already
  if (data_split.records.empty()) {
    throw ValidationError("evaluate requires a nonempty dataset");
  }
  ImageCache cache(data_split);
  Mat feats = eval_features(model, cache, tcfg);
  Mat logits = model.head_logits(feats);
  std::vector<int> preds(cache.size()), labels(cache.size());
  for (size_t i = 0; i < cache.size(); ++i) {
    preds[i] = logits(static_cast<Eigen::Index>(i), 0) >=
                       logits(static_cast<Eigen::Index>(i), 1)
                   ? 0
                   : 1;
    labels[i] = cache.label(i);
  }
  double loss = cross_entropy(logits, labels);
  EpochMetrics m = metrics_row(0, "val", loss, preds, labels, 0.0);
  return {m, metrics::confusion(preds, labels)};
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

FitResult fit(model::Classifier& model, const DataSplit& train_data,
              const DataSplit& val_data, const TrainConfig& cfg,
              const tf::TransformConfig& tcfg, bool resume,
              const EpochCallback& callback) {
  cfg.validate();
  tcfg.validate();
  if (train_data.records.empty() || val_data.records.empty()) {
    throw ValidationError("fit requires nonempty train and val datasets");
  }
  if (!cfg.checkpoint_dir.empty()) {
    fs::create_directories(cfg.checkpoint_dir);
  }

  ImageCache train_cache(train_data);
  ImageCache val_cache(val_data);

  auto trainable = model.trainable_params();
  model::GradBuffers grads(trainable);
  Adam adam(trainable, cfg.lr, cfg.weight_decay);
  PlateauState plateau{std::nullopt, 0, cfg.lr};
  double best_val_acc = -1.0;
  int start_epoch = 0;

  const fs::path best_base = cfg.checkpoint_dir / "checkpoint_best";
  const fs::path last_base = cfg.checkpoint_dir / "checkpoint_last";

  if (resume) {
    fs::path state_file = cfg.checkpoint_dir / "train_state.json";
    if (!fs::exists(state_file)) {
      throw ValidationError("--resume requested but no training state at " +
                            state_file.string());
    }
    std::ifstream in(state_file);
    cfg::json j;
    in >> j;
    start_epoch = j.at("next_epoch").get<int>();
    best_val_acc = j.at("best_val_accuracy").get<double>();
    plateau.lr = j.at("lr").get<double>();
    plateau.bad_epochs = j.at("bad_epochs").get<int>();
    if (!j.at("plateau_best").is_null()) {
      plateau.best = j.at("plateau_best").get<double>();
    }
    adam.set_steps(j.at("adam_steps").get<long long>());
    model.load_params(fs::path(last_base.string() + ".bin"));
    auto moments = model::load_tensor_blob(cfg.checkpoint_dir / "adam_state.bin");
    for (size_t i = 0; i < trainable.size(); ++i) {
      adam.m()[i] = moments.at("m." + trainable[i].name);
      adam.v()[i] = moments.at("v." + trainable[i].name);
    }
  }
  adam.set_lr(plateau.lr);

  JsonlLogger log(cfg.metrics_path, resume);

  // Frozen backbones make validation features invariant across epochs, so
  // they are computed once and reused.
  Mat val_feats;
  bool val_feats_ready = false;

  FitResult result;
  const bool frozen = model.spec().freeze_backbone;
  const int n_train = static_cast<int>(train_cache.size());

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double epoch_lr = plateau.lr;
    adam.set_lr(epoch_lr);

    // ---- train ----
    std::vector<int> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix64(cfg.seed, 0x54762a1u, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0;
    std::vector<int> preds, labels;
    preds.reserve(order.size());
    labels.reserve(order.size());

    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n_train - start);
      std::vector<int> batch_labels(static_cast<size_t>(bsz));
      Mat logits;
      Mat dropped;

      if (frozen) {
        Mat feats(bsz, model.spec().feature_dim());
        parallel_for(bsz, [&](int i) {
          const int idx = order[static_cast<size_t>(start + i)];
          Rng aug_rng(mix64(cfg.seed, 0xa76u,
                            static_cast<uint64_t>(epoch) * 1000003u +
                                static_cast<uint64_t>(start + i)));
          Chw x = tf::augment(train_cache.image(static_cast<size_t>(idx)),
                              tcfg, aug_rng);
          feats.row(i) = model.backbone_features_one(x).transpose();
          batch_labels[static_cast<size_t>(i)] =
              train_cache.label(static_cast<size_t>(idx));
        });
        Rng drop_rng(mix64(cfg.seed, 0xd207u,
                           static_cast<uint64_t>(epoch) * 1000003u +
                               static_cast<uint64_t>(start)));
        logits = model.head_train(feats, drop_rng, &dropped);
      } else {
        // Per-sample forward keeps only one stash alive at a time after its
        // backward, so unfrozen training stays within memory.
        logits.resize(bsz, model.spec().num_classes);
        grads.zero();
        for (int i = 0; i < bsz; ++i) {
          const int idx = order[static_cast<size_t>(start + i)];
          Rng aug_rng(mix64(cfg.seed, 0xa76u,
                            static_cast<uint64_t>(epoch) * 1000003u +
                                static_cast<uint64_t>(start + i)));
          Chw x = tf::augment(train_cache.image(static_cast<size_t>(idx)),
                              tcfg, aug_rng);
          batch_labels[static_cast<size_t>(i)] =
              train_cache.label(static_cast<size_t>(idx));
          Rng drop_rng(mix64(cfg.seed, 0xd207u,
                             static_cast<uint64_t>(epoch) * 1000003u +
                                 static_cast<uint64_t>(start + i)));
          auto [lg, stash] = model.train_forward_full(x, drop_rng);
          logits.row(i) = lg.transpose();
          Mat p = model::predict_proba(lg.transpose());
          Vec dl = p.row(0).transpose();
          dl(batch_labels[static_cast<size_t>(i)]) -= 1.f;
          dl /= static_cast<float>(bsz);
          model.train_backward_full(*stash, dl, grads);
        }
      }

      const double batch_loss = cross_entropy(logits, batch_labels);
      if (!std::isfinite(batch_loss)) {
        throw RuntimeFailure("non-finite loss at epoch " +
                             std::to_string(epoch) + ", batch offset " +
                             std::to_string(start));
      }
      loss_sum += batch_loss * bsz;

      if (frozen) {
        Mat probs = model::predict_proba(logits);
        Mat dlogits = probs;
        for (int i = 0; i < bsz; ++i) {
          dlogits(i, batch_labels[static_cast<size_t>(i)]) -= 1.f;
        }
        dlogits /= static_cast<float>(bsz);
        grads.zero();
        // Trainable order for a frozen model is exactly head.fc.w, head.fc.b.
        model.head_backward(dropped, dlogits, grads.g[0], grads.g[1]);
      }
      adam.step(grads);

      for (int i = 0; i < bsz; ++i) {
        preds.push_back(logits(i, 0) >= logits(i, 1) ? 0 : 1);
        labels.push_back(batch_labels[static_cast<size_t>(i)]);
      }
    }

    EpochMetrics train_row = metrics_row(epoch, "train", loss_sum / n_train,
                                         preds, labels, epoch_lr);

    // ---- validate ----
    if (!val_feats_ready || !frozen) {
      val_feats = eval_features(model, val_cache, tcfg);
      val_feats_ready = true;
    }
    Mat val_logits = model.head_logits(val_feats);
    std::vector<int> vpreds(val_cache.size()), vlabels(val_cache.size());
    for (size_t i = 0; i < val_cache.size(); ++i) {
      vpreds[i] = val_logits(static_cast<Eigen::Index>(i), 0) >=
                          val_logits(static_cast<Eigen::Index>(i), 1)
                      ? 0
                      : 1;
      vlabels[i] = val_cache.label(i);
    }
    double val_loss = cross_entropy(val_logits, vlabels);
    EpochMetrics val_row =
        metrics_row(epoch, "val", val_loss, vpreds, vlabels, epoch_lr);

    log.log(train_row);
    log.log(val_row);
    result.history.push_back(train_row);
    result.history.push_back(val_row);

    // ---- checkpoint on strict validation-accuracy improvement ----
    if (!cfg.checkpoint_dir.empty()) {
      if (val_row.accuracy > best_val_acc) {
        best_val_acc = val_row.accuracy;
        save_checkpoint(model, best_base,
                        {model.spec(), epoch, best_val_acc, cfg.seed});
      }
      save_checkpoint(model, last_base,
                      {model.spec(), epoch, best_val_acc, cfg.seed});
    } else if (val_row.accuracy > best_val_acc) {
      best_val_acc = val_row.accuracy;
    }

    // ---- scheduler ----
    const double monitored = cfg.monitor == Monitor::val_loss
                                 ? val_row.loss
                                 : val_row.accuracy;
    plateau = plateau_step(plateau, monitored, cfg);

    if (!cfg.checkpoint_dir.empty()) {
      std::vector<nn::Param> moments;
      std::vector<std::vector<float>> names_keepalive;
      for (size_t i = 0; i < trainable.size(); ++i) {
        moments.push_back({"m." + trainable[i].name, &adam.m()[i], false});
        moments.push_back({"v." + trainable[i].name, &adam.v()[i], false});
      }
      model::save_tensor_blob(cfg.checkpoint_dir / "adam_state.bin", moments);
      cfg::json j;
      j["next_epoch"] = epoch + 1;
      j["best_val_accuracy"] = best_val_acc;
      j["lr"] = plateau.lr;
      j["bad_epochs"] = plateau.bad_epochs;
      j["plateau_best"] =
          plateau.best.has_value() ? cfg::json(*plateau.best) : cfg::json();
      j["adam_steps"] = adam.steps();
      std::ofstream out(cfg.checkpoint_dir / "train_state.json");
      out << j.dump(2) << "\n";
    }

    result.epochs_run = epoch + 1;
    if (callback && !callback(train_row, val_row)) break;
  }

  result.best_checkpoint = fs::path(best_base.string() + ".json");
  result.best_val_accuracy = best_val_acc;
  return result;
}

}  // namespace sentinel::train
