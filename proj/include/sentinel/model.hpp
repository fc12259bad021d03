#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sentinel/nn.hpp"

namespace sentinel::model {

enum class Family { cnn, vit };
enum class Scale { full, tiny };

const char* family_name(Family f);
const char* scale_name(Scale s);
Family family_from_name(const std::string& s);
Scale scale_from_name(const std::string& s);

/// Backbone + head description. Zeroed shape fields resolve to the scale
/// defaults: the full CNN is a ResNet-50 (2048-d pooled feature), the full
/// ViT is ViT-B/16 (12 layers, 12 heads, 768 dim); the tiny variants are
/// CPU-testable stand-ins with the same interfaces.
struct ModelSpec {
  Family family = Family::cnn;
  Scale scale = Scale::tiny;
  int num_classes = 2;
  float dropout_p = 0.4f;  // CNN head only; the ViT head has no dropout
  bool freeze_backbone = true;
  int image_size = 224;

  int vit_patch = 0;
  int vit_layers = 0;
  int vit_heads = 0;
  int vit_dim = 0;
  int vit_mlp_hidden = 0;

  int cnn_feature_dim = 0;

  /// Pretrained parameter blob for full-scale backbones (see
  /// tools/export_weights.py). Tiny backbones are seeded random and never
  /// need a file.
  std::string weights_file;

  /// Grad-CAM capture point; empty means the last convolutional block.
  std::string target_layer;

  void resolve();
  int feature_dim() const;
  int patch_grid() const { return image_size / vit_patch; }
  int token_count() const { return patch_grid() * patch_grid() + 1; }
  bool operator==(const ModelSpec& o) const;
};

/// Head parameter count: feature_dim x classes weights plus classes biases.
long long head_param_count(const ModelSpec& spec);

/// Activations and target-class gradients recorded at a conv block.
struct CamContext {
  Chw activations;
  Chw gradients;
  int target_class = 0;
};

/// Per-layer per-head attention probabilities (row-stochastic, CLS token at
/// index 0), optionally with target-class gradients.
struct AttentionStack {
  int layers = 0, heads = 0, tokens = 0, patch_grid = 0;
  std::vector<nn::Mat> attn;
  std::vector<nn::Mat> grads;

  const nn::Mat& at(int layer, int head) const {
    return attn[static_cast<size_t>(layer) * heads + head];
  }
  const nn::Mat& grad_at(int layer, int head) const {
    return grads[static_cast<size_t>(layer) * heads + head];
  }
  bool has_grads() const { return !grads.empty(); }
};

namespace detail {
struct Backbone;
}

/// Gradient buffers aligned with a parameter list.
struct GradBuffers {
  std::vector<std::vector<float>> g;
  explicit GradBuffers(const std::vector<nn::Param>& params);
  void zero();
};

class Classifier {
 public:
  Classifier();
  ~Classifier();
  Classifier(Classifier&&) noexcept;
  Classifier& operator=(Classifier&&) noexcept;
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;

  /// Builds the backbone (seeded random for tiny, loaded from
  /// spec.weights_file for full) and a freshly initialized head.
  static Classifier build(const ModelSpec& spec, uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  uint64_t seed() const { return seed_; }

  // -- inference ------------------------------------------------------------
  /// Evaluation-mode logits, deterministic. Parallel over batch entries.
  nn::Mat forward(const std::vector<Chw>& batch) const;
  nn::Vec forward_one(const Chw& img) const;

  /// Pooled backbone features (B x D). The backbone is frozen in the usual
  /// configuration, so features under deterministic preprocessing are stable
  /// across epochs and may be cached by callers.
  nn::Mat backbone_features(const std::vector<Chw>& batch) const;
  nn::Vec backbone_features_one(const Chw& img) const;

  /// Head logits from pooled features (evaluation mode, no dropout).
  nn::Mat head_logits(const nn::Mat& feats) const;

  // -- training -------------------------------------------------------------
  /// Head forward in training mode; applies dropout for the CNN family and
  /// returns the post-dropout features backward needs.
  nn::Mat head_train(const nn::Mat& feats, Rng& rng, nn::Mat* dropped) const;
  /// Accumulates head gradients given d(loss)/d(logits).
  void head_backward(const nn::Mat& dropped, const nn::Mat& dlogits,
                     std::vector<float>& dw, std::vector<float>& db) const;

  /// Per-sample forward/backward through the whole network, for unfrozen
  /// training. Gradients accumulate into buffers aligned with
  /// trainable_params().
  struct FullStash;
  std::pair<nn::Vec, std::shared_ptr<FullStash>> train_forward_full(
      const Chw& img, Rng& rng) const;
  void train_backward_full(const FullStash& stash, const nn::Vec& dlogits,
                           GradBuffers& grads) const;

  // -- capture hooks ----------------------------------------------------------
  /// Runs forward (evaluation mode) and records activations plus
  /// target-class gradients at the named conv block. `activation_offset`,
  /// when non-null, is added to the captured activations before the rest of
  /// the forward pass; tests use it for finite-difference checks.
  CamContext cam_capture(const Chw& img, int target_class,
                         const std::string& layer = "",
                         const Chw* activation_offset = nullptr,
                         float* score_out = nullptr) const;

  /// Records the attention stack for one image; with_grads also runs the
  /// backward pass for target_class and records d(score)/d(attention).
  AttentionStack attention_capture(const Chw& img, bool with_grads = false,
                                   int target_class = 0,
                                   const std::map<int, nn::Mat>* attn_override = nullptr) const;

  // -- parameters -------------------------------------------------------------
  std::vector<nn::Param> params();
  std::vector<nn::Param> params() const;
  /// Exactly the head when the backbone is frozen; everything otherwise.
  std::vector<nn::Param> trainable_params();

  void save_params(const std::filesystem::path& file) const;
  void load_params(const std::filesystem::path& file);

  std::vector<std::string> capture_layer_names() const;
  std::string default_target_layer() const;

 private:
  ModelSpec spec_;
  uint64_t seed_ = 0;
  std::unique_ptr<detail::Backbone> backbone_;
  nn::Linear head_;

  friend struct detail::Backbone;
};

/// Row-wise softmax of logits; probabilities per class.
nn::Mat predict_proba(const nn::Mat& logits);

// Named-tensor blob I/O shared by checkpoints and pretrained weight files.
void save_tensor_blob(const std::filesystem::path& file,
                      const std::vector<nn::Param>& params);
std::map<std::string, std::vector<float>> load_tensor_blob(
    const std::filesystem::path& file);

}  // namespace sentinel::model
