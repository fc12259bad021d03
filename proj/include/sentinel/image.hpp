#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sentinel {

/// Interleaved RGB image, float32 in [0, 1], row-major HxWx3.
struct ImageF {
  int h = 0, w = 0;
  std::vector<float> px;

  ImageF() = default;
  ImageF(int h_, int w_) : h(h_), w(w_), px(static_cast<size_t>(h_) * w_ * 3, 0.f) {}

  float* at(int y, int x) { return px.data() + (static_cast<size_t>(y) * w + x) * 3; }
  const float* at(int y, int x) const {
    return px.data() + (static_cast<size_t>(y) * w + x) * 3;
  }
};

/// Interleaved RGB image, 8-bit. Used as the in-memory decode cache.
struct ImageU8 {
  int h = 0, w = 0;
  std::vector<uint8_t> px;
};

/// Channel-first float tensor (C x H x W), the model input layout.
struct Chw {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;

  Chw() = default;
  Chw(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.f) {}

  float& at(int ci, int y, int x) {
    return v[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  float at(int ci, int y, int x) const {
    return v[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  float* plane(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
  const float* plane(int ci) const {
    return v.data() + static_cast<size_t>(ci) * h * w;
  }
};

/// Binary mask, 0 or 255 per pixel.
struct MaskU8 {
  int h = 0, w = 0;
  std::vector<uint8_t> m;

  MaskU8() = default;
  MaskU8(int h_, int w_) : h(h_), w(w_), m(static_cast<size_t>(h_) * w_, 0) {}
};

ImageF to_float(const ImageU8& img);
ImageU8 to_u8(const ImageF& img);

/// Decodes a PNG or JPEG file as RGB. Throws RuntimeFailure on missing or
/// undecodable files.
ImageU8 load_image(const std::filesystem::path& path);

void save_png(const std::filesystem::path& path, const ImageF& img);

/// 1-bit PNG, nonzero mask pixels become white.
void save_mask_png(const std::filesystem::path& path, const MaskU8& mask);

MaskU8 load_mask(const std::filesystem::path& path);

/// Bilinear resize with half-pixel-center sampling (identity when sizes match).
ImageF resize_bilinear(const ImageF& src, int oh, int ow);

/// Bilinear resize of a single-channel grid stored row-major.
std::vector<float> resize_plane_bilinear(const std::vector<float>& src, int sh,
                                         int sw, int oh, int ow);

Chw to_chw(const ImageF& img);
ImageF to_image(const Chw& t);

}  // namespace sentinel
