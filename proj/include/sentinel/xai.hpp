#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sentinel/data.hpp"
#include "sentinel/model.hpp"
#include "sentinel/transforms.hpp"

namespace sentinel::xai {

/// Attribution scores on a grid, min-max normalized to [0,1]; a constant map
/// normalizes to all zeros. origin_h/w remember the source image size.
struct SaliencyMap {
  int rows = 0, cols = 0;
  std::vector<float> grid;
  int origin_h = 0, origin_w = 0;

  float at(int r, int c) const {
    return grid[static_cast<size_t>(r) * cols + c];
  }
};

/// Min-max normalization with the all-zeros convention for constant input.
void minmax_normalize(std::vector<float>& v);

/// Channel weights are the spatial mean of the gradients; the map is the
/// ReLU of the weight-summed activations, upsampled to the origin and
/// normalized.
SaliencyMap grad_cam_from_context(const model::CamContext& ctx, int origin_h,
                                  int origin_w);

/// Runs the capture on a (CNN) model and computes the map for one normalized
/// input image.
SaliencyMap grad_cam(const model::Classifier& model, const Chw& image,
                     int target_class, const std::string& target_layer = "");

enum class HeadFusion { mean, max, min };
HeadFusion fusion_from_name(const std::string& s);

/// Intermediates captured during rollout, exposed for property checks.
struct RolloutTrace {
  std::vector<nn::Mat> fused;        // per layer, after discard
  std::vector<nn::Mat> a_hat;        // per layer, 0.5*(F+I) row-normalized
  std::vector<nn::Mat> cumulative;   // R after each layer
};

/// Cumulative attention rollout: per layer, heads are fused, the lowest
/// discard_ratio fraction of entries (never the CLS column) is zeroed, the
/// identity residual is mixed in, rows are renormalized and the running
/// product updated. The CLS row over patch tokens becomes the map.
SaliencyMap attention_rollout(const model::AttentionStack& stack,
                              float discard_ratio = 0.3f,
                              HeadFusion fusion = HeadFusion::mean,
                              RolloutTrace* trace = nullptr);

/// Rollout where each layer is fused as the head-mean of
/// max(0, grads .* attn); no discard is applied.
SaliencyMap grad_attention_rollout(const model::AttentionStack& stack,
                                   RolloutTrace* trace = nullptr);

/// Bilinear map resize to the given size (values are not re-normalized).
std::vector<float> upsample(const SaliencyMap& map, int h, int w);

/// Alpha-composite a heatmap over an image: out = alpha*palette(map) +
/// (1-alpha)*image, clamped.
ImageF overlay(const ImageF& image, const SaliencyMap& map, float alpha = 0.5f,
               const std::string& palette = "viridis");

/// RGB for a scalar in [0,1] under a named palette (viridis, jet, gray).
void palette_rgb(const std::string& palette, float t, float rgb[3]);

enum class Method { gradcam, rollout, grad_rollout };
Method method_from_name(const std::string& s);
const char* method_name(Method m);

struct GalleryOptions {
  Method method = Method::gradcam;
  int n_correct = 10;
  int n_misclassified = 10;
  data::Split split = data::Split::test;
  float alpha = 0.5f;
  std::string palette = "viridis";
};

/// Runs the model over a manifest split, renders overlays for correctly and
/// incorrectly classified samples into correct/ and misclassified/ folders,
/// and writes index.json (noting any shortfall against the requested counts).
void explain_batch(const model::Classifier& model,
                   const data::DatasetManifest& manifest,
                   const tf::TransformConfig& tcfg,
                   const GalleryOptions& options,
                   const std::filesystem::path& out_dir);

}  // namespace sentinel::xai
