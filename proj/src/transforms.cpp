#include "sentinel/transforms.hpp"

#include <algorithm>
#include <cmath>

namespace sentinel::tf {

void TransformConfig::validate() const {
  if (crop_size < 8) throw ValidationError("crop_size too small");
  if (flip_prob < 0.f || flip_prob > 1.f) {
    throw ValidationError("flip_prob must be in [0,1]");
  }
  if (max_rotation < 0.f) throw ValidationError("max_rotation must be >= 0");
  for (float s : sigma) {
    if (s <= 0.f) throw ValidationError("sigma components must be positive");
  }
  if (rrc_scale[0] <= 0.f || rrc_scale[0] > rrc_scale[1] ||
      rrc_scale[1] > 1.f) {
    throw ValidationError("rrc_scale must satisfy 0 < lo <= hi <= 1");
  }
  if (rrc_aspect[0] <= 0.f || rrc_aspect[0] > rrc_aspect[1]) {
    throw ValidationError("rrc_aspect must satisfy 0 < lo <= hi");
  }
}

ImageF hflip(const ImageF& src) {
  ImageF out(src.h, src.w);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      const float* p = src.at(y, src.w - 1 - x);
      float* o = out.at(y, x);
      o[0] = p[0];
      o[1] = p[1];
      o[2] = p[2];
    }
  }
  return out;
}

ImageF crop(const ImageF& src, int y, int x, int h, int w) {
  if (y < 0 || x < 0 || y + h > src.h || x + w > src.w) {
    throw ValidationError("crop window out of bounds");
  }
  ImageF out(h, w);
  for (int r = 0; r < h; ++r) {
    const float* p = src.at(y + r, x);
    std::copy(p, p + static_cast<size_t>(w) * 3, out.at(r, 0));
  }
  return out;
}

namespace {

// Mirror without repeating the border sample (…cba|abc|cba…).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

inline void sample_reflect_bilinear(const ImageF& src, double fy, double fx,
                                    float* out) {
  int y0 = static_cast<int>(std::floor(fy));
  int x0 = static_cast<int>(std::floor(fx));
  double wy = fy - y0;
  double wx = fx - x0;
  int y0r = reflect_index(y0, src.h);
  int y1r = reflect_index(y0 + 1, src.h);
  int x0r = reflect_index(x0, src.w);
  int x1r = reflect_index(x0 + 1, src.w);
  const float* a = src.at(y0r, x0r);
  const float* b = src.at(y0r, x1r);
  const float* c = src.at(y1r, x0r);
  const float* d = src.at(y1r, x1r);
  for (int ch = 0; ch < 3; ++ch) {
    double top = a[ch] + (b[ch] - a[ch]) * wx;
    double bot = c[ch] + (d[ch] - c[ch]) * wx;
    out[ch] = static_cast<float>(top + (bot - top) * wy);
  }
}

inline float luma(const float* p) {
  return 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx <= 0.f ? 0.f : d / mx;
  if (d <= 0.f) {
    h = 0.f;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.f + (b - r) / d;
  } else {
    h = 4.f + (r - g) / d;
  }
  h /= 6.f;
  if (h < 0.f) h += 1.f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.f) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  float hh = h * 6.f;
  int i = static_cast<int>(hh);
  float f = hh - i;
  float p = v * (1.f - s);
  float q = v * (1.f - s * f);
  float t = v * (1.f - s * (1.f - f));
  switch (i % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace

ImageF rotate_reflect(const ImageF& src, float degrees) {
  if (degrees == 0.f) return src;
  ImageF out(src.h, src.w);
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double ca = std::cos(rad), sa = std::sin(rad);
  const double cy = (src.h - 1) / 2.0, cx = (src.w - 1) / 2.0;
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      // Inverse map: rotate destination coordinates by -degrees.
      double dy = y - cy, dx = x - cx;
      double fy = cy + (sa * dx + ca * dy);
      double fx = cx + (ca * dx - sa * dy);
      sample_reflect_bilinear(src, fy, fx, out.at(y, x));
    }
  }
  return out;
}

ImageF adjust_brightness(const ImageF& src, float factor) {
  if (factor == 1.f) return src;
  ImageF out(src.h, src.w);
  for (size_t i = 0; i < src.px.size(); ++i) {
    out.px[i] = std::clamp(src.px[i] * factor, 0.f, 1.f);
  }
  return out;
}

ImageF adjust_contrast(const ImageF& src, float factor) {
  if (factor == 1.f) return src;
  double mean = 0;
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) mean += luma(src.at(y, x));
  }
  mean /= static_cast<double>(src.h) * src.w;
  const float m = static_cast<float>(mean);
  ImageF out(src.h, src.w);
  for (size_t i = 0; i < src.px.size(); ++i) {
    out.px[i] = std::clamp(m + (src.px[i] - m) * factor, 0.f, 1.f);
  }
  return out;
}

ImageF adjust_saturation(const ImageF& src, float factor) {
  if (factor == 1.f) return src;
  ImageF out(src.h, src.w);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      const float* p = src.at(y, x);
      float* o = out.at(y, x);
      float l = luma(p);
      for (int c = 0; c < 3; ++c) {
        o[c] = std::clamp(l + (p[c] - l) * factor, 0.f, 1.f);
      }
    }
  }
  return out;
}

ImageF adjust_hue(const ImageF& src, float delta_turns) {
  if (delta_turns == 0.f) return src;
  ImageF out(src.h, src.w);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      const float* p = src.at(y, x);
      float* o = out.at(y, x);
      float h, s, v;
      rgb_to_hsv(p[0], p[1], p[2], h, s, v);
      hsv_to_rgb(h + delta_turns, s, v, o[0], o[1], o[2]);
    }
  }
  return out;
}

Chw normalize(const Chw& x, const std::array<float, 3>& mu,
              const std::array<float, 3>& sigma) {
  for (float s : sigma) {
    if (s <= 0.f) throw ValidationError("sigma components must be positive");
  }
  Chw out = x;
  for (int c = 0; c < x.c; ++c) {
    float* p = out.plane(c);
    const float m = mu[static_cast<size_t>(c)];
    const float inv = 1.f / sigma[static_cast<size_t>(c)];
    const size_t n = static_cast<size_t>(x.h) * x.w;
    for (size_t i = 0; i < n; ++i) p[i] = (p[i] - m) * inv;
  }
  return out;
}

Chw denormalize(const Chw& x, const std::array<float, 3>& mu,
                const std::array<float, 3>& sigma) {
  Chw out = x;
  for (int c = 0; c < x.c; ++c) {
    float* p = out.plane(c);
    const float m = mu[static_cast<size_t>(c)];
    const float s = sigma[static_cast<size_t>(c)];
    const size_t n = static_cast<size_t>(x.h) * x.w;
    for (size_t i = 0; i < n; ++i) p[i] = p[i] * s + m;
  }
  return out;
}

Chw eval_preprocess(const ImageF& image, const TransformConfig& cfg) {
  cfg.validate();
  if (image.h <= 0 || image.w <= 0) {
    throw ValidationError("empty image");
  }
  ImageF resized = resize_bilinear(image, cfg.crop_size, cfg.crop_size);
  return normalize(to_chw(resized), cfg.mu, cfg.sigma);
}

Chw augment(const ImageF& image, const TransformConfig& cfg, Rng& rng) {
  cfg.validate();
  if (image.h < cfg.crop_size / 2 || image.w < cfg.crop_size / 2) {
    throw ValidationError("image too small for random resized crop");
  }

  // Random resized crop: sample an area fraction and (log-uniform) aspect
  // ratio, retrying a few times before falling back to a center crop.
  const double area = static_cast<double>(image.h) * image.w;
  int ch = -1, cw = -1, cy = 0, cx = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double s = rng.uniform(cfg.rrc_scale[0], cfg.rrc_scale[1]);
    double loga = rng.uniform(std::log(cfg.rrc_aspect[0]),
                              std::log(cfg.rrc_aspect[1]));
    double a = std::exp(loga);
    int w = static_cast<int>(std::lround(std::sqrt(s * area * a)));
    int h = static_cast<int>(std::lround(std::sqrt(s * area / a)));
    if (w > 0 && h > 0 && w <= image.w && h <= image.h) {
      cy = h == image.h ? 0 : rng.below(image.h - h + 1);
      cx = w == image.w ? 0 : rng.below(image.w - w + 1);
      ch = h;
      cw = w;
      break;
    }
  }
  if (ch < 0) {
    int side = std::min(image.h, image.w);
    cy = (image.h - side) / 2;
    cx = (image.w - side) / 2;
    ch = cw = side;
  }
  ImageF out = crop(image, cy, cx, ch, cw);
  out = resize_bilinear(out, cfg.crop_size, cfg.crop_size);

  if (rng.flip(cfg.flip_prob)) out = hflip(out);

  float angle = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
  out = rotate_reflect(out, angle);

  float b = rng.uniform(std::max(0.f, 1.f - cfg.jitter_brightness),
                        1.f + cfg.jitter_brightness);
  float c = rng.uniform(std::max(0.f, 1.f - cfg.jitter_contrast),
                        1.f + cfg.jitter_contrast);
  float s = rng.uniform(std::max(0.f, 1.f - cfg.jitter_saturation),
                        1.f + cfg.jitter_saturation);
  float hshift = rng.uniform(-cfg.jitter_hue, cfg.jitter_hue);
  out = adjust_brightness(out, b);
  out = adjust_contrast(out, c);
  out = adjust_saturation(out, s);
  out = adjust_hue(out, hshift);

  return normalize(to_chw(out), cfg.mu, cfg.sigma);
}

}  // namespace sentinel::tf
