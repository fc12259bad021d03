#pragma once

#include <array>

#include "sentinel/core.hpp"
#include "sentinel/image.hpp"

namespace sentinel::tf {

/// Augmentation and normalization parameters. The channel statistics default
/// to the ImageNet values the pretrained backbones were trained with.
struct TransformConfig {
  int crop_size = 224;
  float flip_prob = 0.5f;
  float max_rotation = 10.f;  // degrees
  float jitter_brightness = 0.2f;
  float jitter_contrast = 0.2f;
  float jitter_saturation = 0.2f;
  float jitter_hue = 0.05f;
  std::array<float, 2> rrc_scale = {0.5f, 1.0f};   // area fraction
  std::array<float, 2> rrc_aspect = {0.75f, 4.f / 3.f};
  std::array<float, 3> mu = {0.485f, 0.456f, 0.406f};
  std::array<float, 3> sigma = {0.229f, 0.224f, 0.225f};

  void validate() const;
};

/// Training pipeline: random resized crop, horizontal flip, rotation with
/// reflection padding, color jitter, then channel-first normalization.
/// Deterministic given the rng stream.
Chw augment(const ImageF& image, const TransformConfig& cfg, Rng& rng);

/// Evaluation pipeline: bilinear resize to crop_size and normalization only.
Chw eval_preprocess(const ImageF& image, const TransformConfig& cfg);

/// out[c] = (x[c] - mu[c]) / sigma[c]
Chw normalize(const Chw& x, const std::array<float, 3>& mu,
              const std::array<float, 3>& sigma);

/// Exact inverse of normalize; no clamping.
Chw denormalize(const Chw& x, const std::array<float, 3>& mu,
                const std::array<float, 3>& sigma);

// Geometric/color pieces, exposed for testing.
ImageF rotate_reflect(const ImageF& src, float degrees);
ImageF hflip(const ImageF& src);
ImageF crop(const ImageF& src, int y, int x, int h, int w);
ImageF adjust_brightness(const ImageF& src, float factor);
ImageF adjust_contrast(const ImageF& src, float factor);
ImageF adjust_saturation(const ImageF& src, float factor);
ImageF adjust_hue(const ImageF& src, float delta_turns);

}  // namespace sentinel::tf
